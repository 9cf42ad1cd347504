#include "ckad/dataset.hpp"

#include "ckad/cloud_io.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace ckad {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

// "box/defect_3" -> "task_1/test/box_defect_3.ply"
std::string relative_path(const Sample& s) {
  std::string name = s.id;
  for (char& c : name)
    if (c == '/') c = '_';
  return "task_" + std::to_string(s.task) + "/" + s.split + "/" + name + ".ply";
}

json sample_entry(const Sample& s, const std::string& file, std::uint64_t hash) {
  json e = {{"id", s.id},     {"category", s.category},
            {"task", s.task}, {"split", s.split},
            {"label", s.label == ObjectLabel::anomalous ? "anomalous" : "normal"},
            {"seed", s.seed}, {"file", file},
            {"hash", hex(hash)}};
  if (s.defect) {
    e["defect"] = {{"kind", to_string(s.defect->kind)},
                   {"amplitude", s.defect->amplitude},
                   {"extent", s.defect->extent}};
  } else {
    e["defect"] = nullptr;
  }
  return e;
}

}  // namespace

std::uint64_t file_hash(const fs::path& path) { return fnv1a(read_file(path)); }

bool non_empty_directory(const fs::path& dir) {
  std::error_code ec;
  return fs::is_directory(dir, ec) && fs::directory_iterator(dir, ec) != fs::directory_iterator();
}

std::uint64_t write_dataset(const TaskStream& stream, const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["seed"] = cfg.seed;
  manifest["points"] = cfg.points;
  json tasks = json::array();
  json samples = json::array();
  std::size_t written_tests = 0;
  for (const Task& task : stream.tasks) {
    tasks.push_back({{"id", task.id}, {"categories", task.categories}});
    std::vector<const Sample*> todo;
    for (const auto& s : task.train) todo.push_back(&s);
    // test sets are cumulative; each test cloud is stored once, under its own task
    for (std::size_t i = written_tests; i < task.test.size(); ++i) todo.push_back(&task.test[i]);
    written_tests = task.test.size();
    for (const Sample* s : todo) {
      const std::string rel = relative_path(*s);
      fs::create_directories((dir / rel).parent_path());
      write_cloud(*s->cloud, dir / rel, CloudFormat::ply);
      samples.push_back(sample_entry(*s, rel, file_hash(dir / rel)));
    }
  }
  manifest["tasks"] = tasks;
  manifest["samples"] = samples;
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream out(dir / kManifestName, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  return fnv1a(text);
}

TaskStream load_dataset(const fs::path& dir, const RunConfig& cfg) {
  const fs::path mpath = dir / kManifestName;
  if (!fs::exists(mpath)) throw DataError("no " + std::string(kManifestName) + " in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_file(mpath));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
  try {
    const auto& tasks = manifest.at("tasks");
    if (static_cast<int>(tasks.size()) != cfg.tasks)
      throw DataError("manifest has " + std::to_string(tasks.size()) + " tasks, config expects " +
                      std::to_string(cfg.tasks));
    if (manifest.at("points").get<Eigen::Index>() != cfg.points)
      throw DataError("manifest point count differs from config");

    TaskStream stream;
    std::map<int, std::size_t> index;
    for (const auto& t : tasks) {
      Task task;
      task.id = t.at("id").get<int>();
      task.categories = t.at("categories").get<std::vector<std::string>>();
      if (static_cast<int>(task.categories.size()) != cfg.categories_per_task)
        throw DataError("task " + std::to_string(task.id) + " category count differs from config");
      index[task.id] = stream.tasks.size();
      stream.tasks.push_back(std::move(task));
    }
    std::vector<std::vector<Sample>> tests(stream.tasks.size());
    for (const auto& e : manifest.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.category = e.at("category").get<std::string>();
      s.task = e.at("task").get<int>();
      s.split = e.at("split").get<std::string>();
      s.label = e.at("label").get<std::string>() == "anomalous" ? ObjectLabel::anomalous : ObjectLabel::normal;
      s.seed = e.at("seed").get<std::uint64_t>();
      if (!e.at("defect").is_null()) {
        const auto& d = e.at("defect");
        s.defect = DefectSpec{defect_from_string(d.at("kind").get<std::string>()), d.at("amplitude").get<double>(),
                              d.at("extent").get<double>()};
      }
      const fs::path file = dir / e.at("file").get<std::string>();
      const std::string bytes = read_file(file);
      if (hex(fnv1a(bytes)) != e.at("hash").get<std::string>()) throw DataError("hash mismatch for " + file.string());
      PointCloud cloud = read_cloud(file, CloudFormat::ply);
      cloud.label = s.label;
      if (cloud.size() != cfg.points) throw DataError(file.string() + " has an unexpected point count");
      s.cloud = std::make_shared<const PointCloud>(std::move(cloud));
      const auto it = index.find(s.task);
      if (it == index.end()) throw DataError("sample " + s.id + " references an unknown task");
      if (s.split == "train") {
        if (s.label != ObjectLabel::normal) throw DataError("anomalous cloud in a train split: " + s.id);
        stream.tasks[it->second].train.push_back(std::move(s));
      } else if (s.split == "test") {
        tests[it->second].push_back(std::move(s));
      } else {
        throw DataError("unknown split '" + s.split + "' for " + s.id);
      }
    }
    std::vector<Sample> cumulative;
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
      for (auto& s : tests[t]) cumulative.push_back(std::move(s));
      stream.tasks[t].test = cumulative;
    }
    return stream;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  } catch (const ParseError& e) {
    throw DataError(e.what());
  }
}

}  // namespace ckad
