#include "ckad/cloud_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace ckad {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY IO assumes a little-endian host");

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, std::uint64_t line) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError("malformed number '" + tok + "'", line);
  return v;
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<Point3> pts;
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto toks = split_ws(line);
    if (toks.size() != 3) throw ParseError("expected 3 coordinates per line in " + path.string(), lineno);
    pts.emplace_back(parse_double(toks[0], lineno), parse_double(toks[1], lineno), parse_double(toks[2], lineno));
  }
  if (pts.empty()) throw ParseError("no points in " + path.string(), lineno);
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) cloud.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return cloud;
}

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);

  auto offset = [&in]() { return static_cast<std::uint64_t>(std::max<std::streamoff>(0, in.tellg())); };
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw ParseError("missing 'ply' magic", 0);

  bool binary_le = false;
  std::int64_t vertices = -1;
  bool in_vertex = false;
  std::vector<std::pair<std::string, std::string>> props;  // (type, name)
  while (true) {
    const auto at = offset();
    if (!std::getline(in, line)) throw ParseError("unterminated PLY header", at);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = split_ws(line);
    if (toks.empty() || toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "end_header") break;
    if (toks[0] == "format") {
      if (toks.size() != 3 || toks[1] != "binary_little_endian")
        throw ParseError("unsupported PLY format '" + line + "'", at);
      binary_le = true;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw ParseError("malformed element line", at);
      if (toks[1] != "vertex") throw ParseError("unsupported PLY element '" + toks[1] + "'", at);
      if (vertices >= 0) throw ParseError("duplicate vertex element", at);
      try {
        vertices = std::stoll(toks[2]);
      } catch (const std::exception&) {
        throw ParseError("malformed vertex count", at);
      }
      in_vertex = true;
    } else if (toks[0] == "property") {
      if (!in_vertex || toks.size() != 3) throw ParseError("unsupported PLY property '" + line + "'", at);
      props.emplace_back(toks[1], toks[2]);
    } else {
      throw ParseError("unknown PLY header line '" + line + "'", at);
    }
  }
  const auto data_start = offset();
  if (!binary_le) throw ParseError("PLY format line missing", data_start);
  auto is_float = [](const std::string& t) { return t == "float" || t == "float32"; };
  auto is_uchar = [](const std::string& t) { return t == "uchar" || t == "uint8"; };
  const bool xyz_ok = props.size() >= 3 && is_float(props[0].first) && props[0].second == "x" &&
                      is_float(props[1].first) && props[1].second == "y" && is_float(props[2].first) &&
                      props[2].second == "z";
  const bool has_label = props.size() == 4 && is_uchar(props[3].first) && props[3].second == "label";
  if (!xyz_ok || !(props.size() == 3 || has_label))
    throw ParseError("unsupported PLY vertex layout (need float x, y, z [uchar label])", data_start);
  if (vertices <= 0) throw ParseError("PLY has no vertices", data_start);

  const std::size_t stride = has_label ? 13 : 12;
  std::vector<char> buf(stride * static_cast<std::size_t>(vertices));
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ParseError("truncated PLY vertex data", data_start + static_cast<std::uint64_t>(in.gcount()));

  PointCloud cloud;
  cloud.points.resize(vertices, 3);
  if (has_label) cloud.point_labels.emplace(static_cast<std::size_t>(vertices));
  for (std::int64_t i = 0; i < vertices; ++i) {
    const char* rec = buf.data() + static_cast<std::size_t>(i) * stride;
    float xyz[3];
    std::memcpy(xyz, rec, sizeof xyz);
    cloud.points.row(i) << xyz[0], xyz[1], xyz[2];
    if (has_label) (*cloud.point_labels)[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rec[12]);
  }
  if (!cloud.points.allFinite()) throw ParseError("non-finite coordinate in PLY", data_start);
  return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "# x y z\n" << std::setprecision(9);
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
    out << static_cast<float>(cloud.points(i, 0)) << ' ' << static_cast<float>(cloud.points(i, 1)) << ' '
        << static_cast<float>(cloud.points(i, 2)) << '\n';
}

void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const bool labels = cloud.point_labels.has_value();
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.points.rows()
      << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (labels) out << "property uchar label\n";
  out << "end_header\n";
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    const float xyz[3] = {static_cast<float>(cloud.points(i, 0)), static_cast<float>(cloud.points(i, 1)),
                          static_cast<float>(cloud.points(i, 2))};
    out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
    if (labels) out.put(static_cast<char>((*cloud.point_labels)[static_cast<std::size_t>(i)]));
  }
}

}  // namespace

CloudFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ply" || ext == ".PLY") return CloudFormat::ply;
  if (ext == ".xyz" || ext == ".txt" || ext == ".XYZ") return CloudFormat::xyz;
  throw ArgumentError("cannot infer cloud format from '" + path.string() + "'");
}

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  return format == CloudFormat::ply ? read_ply(path) : read_xyz(path);
}

PointCloud read_cloud(const std::filesystem::path& path) { return read_cloud(path, format_from_path(path)); }

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  validate(cloud);
  if (format == CloudFormat::ply)
    write_ply(cloud, path);
  else
    write_xyz(cloud, path);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_cloud(cloud, path, format_from_path(path));
}

}  // namespace ckad
