#include "ckad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ckad {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof v, what);
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw CheckpointError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string encode_hyper(const ModelHyper& h) {
  Writer w;
  w.put<std::int64_t>(h.d);
  w.put<std::int64_t>(h.m);
  w.put<std::int64_t>(h.blocks);
  w.put<std::int64_t>(h.embed_hidden);
  w.put<std::int64_t>(h.ffn_ratio);
  w.put<std::int64_t>(h.num_groups);
  w.put<std::int64_t>(h.group_size);
  w.put<double>(h.eta);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.radius_mode));
  w.put<double>(h.alpha);
  w.put<double>(h.beta);
  w.put<double>(h.epsilon);
  w.put<double>(h.lambda_rpp);
  w.put<double>(h.phi_scale);
  w.put<std::uint8_t>(h.use_kal);
  w.put<std::uint8_t>(h.use_kaa);
  w.put<std::uint8_t>(h.kaa_normalized);
  w.put<std::uint64_t>(h.seed);
  return w.data();
}

ModelHyper decode_hyper(Reader& r) {
  ModelHyper h;
  h.d = r.get<std::int64_t>("hyper.d");
  h.m = r.get<std::int64_t>("hyper.m");
  h.blocks = r.get<std::int64_t>("hyper.blocks");
  h.embed_hidden = r.get<std::int64_t>("hyper.embed_hidden");
  h.ffn_ratio = r.get<std::int64_t>("hyper.ffn_ratio");
  h.num_groups = r.get<std::int64_t>("hyper.num_groups");
  h.group_size = r.get<std::int64_t>("hyper.group_size");
  h.eta = r.get<double>("hyper.eta");
  h.radius_mode = static_cast<RadiusMode>(r.get<std::uint8_t>("hyper.radius_mode"));
  h.alpha = r.get<double>("hyper.alpha");
  h.beta = r.get<double>("hyper.beta");
  h.epsilon = r.get<double>("hyper.epsilon");
  h.lambda_rpp = r.get<double>("hyper.lambda_rpp");
  h.phi_scale = r.get<double>("hyper.phi_scale");
  h.use_kal = r.get<std::uint8_t>("hyper.use_kal") != 0;
  h.use_kaa = r.get<std::uint8_t>("hyper.use_kaa") != 0;
  h.kaa_normalized = r.get<std::uint8_t>("hyper.kaa_normalized") != 0;
  h.seed = r.get<std::uint64_t>("hyper.seed");
  return h;
}

template <typename T>
void put_array(Writer& w, const std::string& name, const T* data, Eigen::Index rows, Eigen::Index cols,
               std::uint8_t dtype) {
  w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.put<std::uint8_t>(dtype);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(rows));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(cols));
  w.bytes(data, sizeof(T) * static_cast<std::size_t>(rows * cols));
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string hyper = encode_hyper(model.hyper());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(hyper.size()));
  w.bytes(hyper.data(), hyper.size());

  const auto seeds = model.feature_map_seeds();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seeds.size()));
  for (auto s : seeds) w.put<std::uint64_t>(s);

  const auto& entries = model.layout().entries();
  const auto& advisors = model.advisors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size() + advisors.size()));
  const VectorXf flat = model.params().template cast<float>();
  for (const auto& e : entries) put_array(w, e.name, flat.data() + e.offset, e.rows, e.cols, 0);
  for (std::size_t b = 0; b < advisors.size(); ++b)
    put_array(w, "advisor" + std::to_string(b) + ".s", advisors[b].s.data(), advisors[b].s.rows(),
              advisors[b].s.cols(), 1);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(advisors.size()));
  for (const auto& a : advisors) {
    w.put<std::uint64_t>(a.update_count);
    w.put<double>(a.alpha);
    w.put<double>(a.beta);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          4);
  const auto hyper_bytes = r.get<std::uint32_t>("hyper length");
  const std::size_t hyper_start = r.pos();
  ModelHyper hyper = decode_hyper(r);
  if (r.pos() - hyper_start != hyper_bytes) throw CheckpointError("hyperparameter record length mismatch", hyper_start);

  Model<float> model(hyper);
  const auto map_count = r.get<std::uint32_t>("feature map count");
  std::vector<std::uint64_t> seeds(map_count);
  for (auto& s : seeds) s = r.get<std::uint64_t>("feature map seed");
  try {
    model.set_feature_map_seeds(seeds);
  } catch (const ArgumentError& e) {
    throw CheckpointError(e.what(), r.pos());
  }

  std::map<std::string, bool> seen;
  const auto arrays = r.get<std::uint32_t>("array count");
  for (std::uint32_t a = 0; a < arrays; ++a) {
    const std::size_t at = r.pos();
    const auto len = r.get<std::uint16_t>("array name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "array name");
    const auto dtype = r.get<std::uint8_t>("array dtype");
    const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>("array rows"));
    const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>("array cols"));
    if (seen[name]) throw CheckpointError("duplicate array '" + name + "'", at);
    seen[name] = true;
    if (name.starts_with("advisor")) {
      const auto b = static_cast<std::size_t>(std::stoul(name.substr(7)));
      auto& adv = model.advisors();
      if (b >= adv.size() || dtype != 1 || rows != adv[b].s.rows() || cols != adv[b].s.cols())
        throw CheckpointError("advisor array '" + name + "' does not match the model", at);
      r.bytes(adv[b].s.data(), sizeof(double) * static_cast<std::size_t>(rows * cols), name.c_str());
      continue;
    }
    if (!model.layout().contains(name)) throw CheckpointError("unknown array '" + name + "'", at);
    const auto& e = model.layout().at(name);
    if (dtype != 0 || rows != e.rows || cols != e.cols)
      throw CheckpointError("array '" + name + "' has the wrong shape or type", at);
    r.bytes(model.params().data() + e.offset, sizeof(float) * static_cast<std::size_t>(e.size()), name.c_str());
  }
  for (const auto& e : model.layout().entries())
    if (!seen[e.name]) throw CheckpointError("checkpoint is missing array '" + e.name + "'", r.pos());

  const auto adv_count = r.get<std::uint32_t>("advisor count");
  if (adv_count != model.advisors().size()) throw CheckpointError("advisor count mismatch", r.pos());
  for (auto& a : model.advisors()) {
    a.update_count = r.get<std::uint64_t>("advisor update count");
    a.alpha = r.get<double>("advisor alpha");
    a.beta = r.get<double>("advisor beta");
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint", r.pos());
  return model;
}

template void save_checkpoint<float>(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Model<double>&, const std::filesystem::path&);

}  // namespace ckad
