#include "ckad/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ckad {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + text + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, RadiusMode>) {
    if (text == "per_center") return RadiusMode::per_center;
    if (text == "global") return RadiusMode::global;
    throw ConfigError("config key '" + key + "' expects per_center or global, got '" + text + "'");
  } else {
    T v{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || text.empty())
      throw ConfigError("config key '" + key + "' has an invalid value '" + text + "'");
    return v;
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return "\"" + v + "\"";
  } else if constexpr (std::is_same_v<T, RadiusMode>) {
    return v == RadiusMode::per_center ? "\"per_center\"" : "\"global\"";
  } else {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(std::string name, T RunConfig::*member) {
  return Field{name, [name, member](RunConfig& c, const std::string& v) { c.*member = parse_value<T>(name, v); },
               [member](const RunConfig& c) { return format_value(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("tasks", &RunConfig::tasks),
      field("categories_per_task", &RunConfig::categories_per_task),
      field("train_per_category", &RunConfig::train_per_category),
      field("normal_test", &RunConfig::normal_test),
      field("anomalous_test", &RunConfig::anomalous_test),
      field("points", &RunConfig::points),
      field("jitter", &RunConfig::jitter),
      field("pose_randomization", &RunConfig::pose_randomization),
      field("defect_amplitude", &RunConfig::defect_amplitude),
      field("defect_extent", &RunConfig::defect_extent),
      field("n", &RunConfig::n),
      field("g", &RunConfig::g),
      field("d", &RunConfig::d),
      field("m", &RunConfig::m),
      field("blocks", &RunConfig::blocks),
      field("embed_hidden", &RunConfig::embed_hidden),
      field("alpha", &RunConfig::alpha),
      field("beta", &RunConfig::beta),
      field("eta", &RunConfig::eta),
      field("radius_mode", &RunConfig::radius_mode),
      field("phi_scale", &RunConfig::phi_scale),
      field("use_kal", &RunConfig::use_kal),
      field("use_kaa", &RunConfig::use_kaa),
      field("kaa_normalized", &RunConfig::kaa_normalized),
      field("epsilon", &RunConfig::epsilon),
      field("lambda_rpp", &RunConfig::lambda_rpp),
      field("ascent_steps", &RunConfig::ascent_steps),
      field("step_size", &RunConfig::step_size),
      field("epochs", &RunConfig::epochs),
      field("batch_size", &RunConfig::batch_size),
      field("lr", &RunConfig::lr),
      field("lr_low", &RunConfig::lr_low),
      field("lr_drop_fraction", &RunConfig::lr_drop_fraction),
      field("weight_decay", &RunConfig::weight_decay),
      field("token_noise", &RunConfig::token_noise),
      field("train_embedder", &RunConfig::train_embedder),
      field("seed", &RunConfig::seed),
      field("threads", &RunConfig::threads),
      field("deterministic", &RunConfig::deterministic),
      field("data_dir", &RunConfig::data_dir),
      field("out_dir", &RunConfig::out_dir),
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.name == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.name, f.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries()) os << k << " = " << v << '\n';
  return os.str();
}

void RunConfig::validate() const {
  const auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  need(tasks >= 1, "tasks must be at least 1");
  need(categories_per_task >= 1, "categories_per_task must be at least 1");
  need(static_cast<std::size_t>(tasks * categories_per_task) <= default_categories().size(),
       "tasks * categories_per_task exceeds the available categories");
  need(train_per_category >= 1 && normal_test >= 1 && anomalous_test >= 1, "split sizes must be positive");
  need(points >= 16, "points must be at least 16");
  need(jitter >= 0.0, "jitter must be non-negative");
  need(defect_amplitude > 0.0 && defect_extent > 0.0 && defect_extent <= 1.0, "defect amplitude/extent out of range");
  need(threads >= 1, "threads must be at least 1");
  try {
    hyper().validate();
    train().validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  need(n <= points, "n must not exceed points");
}

ModelHyper RunConfig::hyper() const {
  ModelHyper h;
  h.d = d;
  h.m = m;
  h.blocks = blocks;
  h.embed_hidden = embed_hidden;
  h.num_groups = n;
  h.group_size = g;
  h.eta = eta;
  h.radius_mode = radius_mode;
  h.alpha = alpha;
  h.beta = beta;
  h.epsilon = epsilon;
  h.lambda_rpp = lambda_rpp;
  h.phi_scale = phi_scale;
  h.use_kal = use_kal;
  h.use_kaa = use_kaa;
  h.kaa_normalized = kaa_normalized;
  h.seed = seed;
  return h;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.lr_low = lr_low;
  t.lr_drop_fraction = lr_drop_fraction;
  t.weight_decay = weight_decay;
  t.token_noise = token_noise;
  t.train_embedder = train_embedder;
  t.rpp.epsilon = epsilon;
  t.rpp.lambda_rpp = lambda_rpp;
  t.rpp.ascent_steps = ascent_steps;
  t.rpp.step_size = step_size;
  t.rpp.seed = mix_seed(seed, 21);
  t.seed = mix_seed(seed, 22);
  return t;
}

ProtocolConfig RunConfig::protocol() const {
  ProtocolConfig p;
  p.hyper = hyper();
  p.train = train();
  p.threads = effective_threads();
  return p;
}

std::vector<CategorySpec> RunConfig::categories() const {
  auto cats = default_categories(points, jitter);
  cats.resize(static_cast<std::size_t>(tasks * categories_per_task));
  for (auto& c : cats) c.pose_randomization = pose_randomization;
  return cats;
}

std::vector<std::vector<std::size_t>> RunConfig::partition() const {
  return contiguous_partition(static_cast<std::size_t>(tasks * categories_per_task), static_cast<std::size_t>(tasks));
}

StreamSizes RunConfig::sizes() const { return StreamSizes{train_per_category, normal_test, anomalous_test}; }

std::vector<DefectSpec> RunConfig::defects() const { return default_defects(defect_amplitude, defect_extent); }

TaskStream RunConfig::build_stream() const {
  validate();
  return build_task_stream(categories(), partition(), sizes(), defects(), mix_seed(seed, 20));
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line;
    bool quoted = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') quoted = !quoted;
      if (body[i] == '#' && !quoted) {
        body.resize(i);
        break;
      }
    }
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": missing key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    base.set(key, value);
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.toml");
  out << "# tool_version " << kToolVersion << '\n';
  out << cfg.to_text();
  if (!out) throw Error("cannot write " + (dir / "config.toml").string());
}

}  // namespace ckad
