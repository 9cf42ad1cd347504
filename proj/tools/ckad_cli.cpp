#include "ckad/bench.hpp"
#include "ckad/checkpoint.hpp"
#include "ckad/config.hpp"
#include "ckad/continual.hpp"
#include "ckad/dataset.hpp"
#include "ckad/gradcheck.hpp"
#include "ckad/log.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ckad;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

// Options shared by every command: a config file, key=value overrides and
// one flag per config field.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> fields;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "Run configuration file (key = value lines)");
    app->add_option("--set", sets, "Override as key=value (repeatable)");
    for (const auto& [key, value] : RunConfig{}.entries()) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      std::string names = "--" + key;
      if (dashed != key) names += ",--" + dashed;
      app->add_option(names, fields[key], "default " + value)->group("Config fields");
    }
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    std::string text;
    for (const auto& [key, value] : fields)
      if (!value.empty()) text += key + " = " + value + "\n";
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      text += s.substr(0, eq) + " = " + s.substr(eq + 1) + "\n";
    }
    return parse_config(text, cfg);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

fs::path prepare_dir(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  echo_config(cfg, dir);
  return dir;
}

TaskStream obtain_stream(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return cfg.build_stream();
  return load_dataset(data_dir, cfg);
}

void progress(const EpochRecord& e, int every) {
  if (every <= 0 || (e.epoch + 1) % every != 0) return;
  std::ostringstream ss;
  ss << "task " << e.task << " epoch " << e.epoch + 1 << " recon " << e.recon << " rpp " << e.rpp << " lr " << e.lr;
  log::info("train", "epoch", ss.str());
}

void write_report(const AnomalyReport& report, const TaskStream& stream, const fs::path& dir, bool token_scores) {
  write_text(dir / "report.json", report_json(report, token_scores));
  std::ofstream epochs(dir / "epochs.csv");
  write_epoch_csv(report.epochs, epochs);
  std::ofstream table(dir / "task_table.csv");
  write_task_table_csv({report}, table);
  std::ostringstream ss;
  ss << report.label << ": final mean O-AUROC " << report.final_mean_auroc() << ", task-1 forgetting "
     << report.mean_forgetting(stream, 1);
  log::info("continual", "report", ss.str());
}

AnomalyReport run_variant(const TaskStream& stream, ProtocolConfig pc, const fs::path& dir, const RunConfig& cfg,
                          int every, bool token_scores) {
  prepare_dir(dir, cfg);
  pc.on_epoch = [every](const EpochRecord& e) { progress(e, every); };
  pc.on_task_end = [&dir](int task, const Model<float>& model) {
    save_checkpoint(model, dir / ("task_" + std::to_string(task) + ".ckpt"));
  };
  DataAuditor auditor(stream);
  AnomalyReport report = run_protocol(stream, pc, &auditor);
  if (auditor.foreign_reads() != 0) throw DataError("training touched data of another task");
  write_report(report, stream, dir, token_scores);
  return report;
}

int cmd_gen_data(const RunConfig& cfg, std::string out, bool force) {
  if (out.empty()) out = cfg.data_dir;
  if (non_empty_directory(out)) {
    if (!force) throw DataError(out + " exists and is not empty (use --force)");
    if (!fs::exists(fs::path(out) / kManifestName))
      throw DataError(out + " does not look like a dataset; refusing to clear it");
    fs::remove_all(out);
  }
  const TaskStream stream = cfg.build_stream();
  const std::uint64_t hash = write_dataset(stream, cfg, out);
  echo_config(cfg, out);
  std::size_t files = 0;
  for (const auto& t : stream.tasks) files += t.train.size();
  files += stream.tasks.back().test.size();
  std::cout << "wrote " << files << " clouds in " << stream.tasks.size() << " tasks to " << out << "\n";
  std::cout << "manifest hash " << std::hex << std::setw(16) << std::setfill('0') << hash << std::dec << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, const std::string& data, std::string out, int task, const std::string& resume,
              int every) {
  if (out.empty()) out = (fs::path(cfg.out_dir) / "train").string();
  const TaskStream stream = obtain_stream(cfg, data);
  if (task < 1 || task > static_cast<int>(stream.tasks.size()))
    throw ConfigError("--task must lie in [1, " + std::to_string(stream.tasks.size()) + "]");
  Model<float> model = resume.empty() ? Model<float>(cfg.hyper()) : load_checkpoint(resume);
  prepare_dir(out, cfg);
  DataAuditor auditor(stream);
  auditor.begin_task(task);
  const auto epochs =
      train_task(model, TrainView(auditor, task), cfg.train(), [every](const EpochRecord& e) { progress(e, every); });
  auditor.end_task();
  const fs::path ckpt = fs::path(out) / ("task_" + std::to_string(task) + ".ckpt");
  save_checkpoint(model, ckpt);
  std::ofstream csv(fs::path(out) / "epochs.csv");
  write_epoch_csv(epochs, csv);
  std::cout << "trained task " << task << " for " << epochs.size() << " epochs";
  if (!epochs.empty()) std::cout << ", final recon loss " << epochs.back().recon;
  std::cout << "\ncheckpoint " << ckpt.string() << "\n";
  return kOk;
}

int cmd_continual(const RunConfig& cfg, const std::string& data, std::string out, const std::string& ablate_list,
                  const std::string& eps_sweep, int every, bool token_scores) {
  if (out.empty()) out = (fs::path(cfg.out_dir) / "continual").string();
  const TaskStream stream = obtain_stream(cfg, data);
  prepare_dir(out, cfg);
  const ProtocolConfig base = cfg.protocol();

  std::vector<AnomalyReport> rows;
  rows.push_back(run_variant(stream, base, fs::path(out) / "full", cfg, every, token_scores));
  for (const auto& what : split_list(ablate_list)) {
    if (what != "rpp" && what != "kaa" && what != "kal") throw ConfigError("--ablate accepts rpp, kaa, kal");
    const ProtocolConfig pc = ablate(base, what);
    rows.push_back(run_variant(stream, pc, fs::path(out) / pc.label, cfg, every, token_scores));
  }
  {
    std::ofstream table(fs::path(out) / "task_table.csv");
    write_task_table_csv(rows, table);
  }

  const auto eps = split_list(eps_sweep);
  if (!eps.empty()) {
    std::ostringstream header, values;
    header << "metric";
    values << "final_mean_auroc";
    for (const auto& e : eps) {
      RunConfig c = cfg;
      c.set("epsilon", e);
      ProtocolConfig pc = c.protocol();
      pc.label = "eps_" + e;
      const AnomalyReport r = run_variant(stream, pc, fs::path(out) / pc.label, c, every, token_scores);
      header << "," << e;
      values << "," << r.final_mean_auroc();
    }
    write_text(fs::path(out) / "eps_sweep.csv", header.str() + "\n" + values.str() + "\n");
  }

  std::ifstream table(fs::path(out) / "task_table.csv");
  std::cout << table.rdbuf();
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& data, std::string out, const std::string& ckpt, int task,
             bool token_scores) {
  if (ckpt.empty()) throw ConfigError("eval needs --checkpoint");
  if (out.empty()) out = (fs::path(cfg.out_dir) / "eval").string();
  const Model<float> model = load_checkpoint(ckpt);
  const TaskStream stream = obtain_stream(cfg, data);
  if (task == 0) task = static_cast<int>(stream.tasks.size());
  if (task < 1 || task > static_cast<int>(stream.tasks.size()))
    throw ConfigError("--task must lie in [1, " + std::to_string(stream.tasks.size()) + "]");
  prepare_dir(out, cfg);
  AnomalyReport report;
  report.label = "eval";
  RoundReport round;
  round.after_task = task;
  round.records = evaluate(model, stream.tasks[static_cast<std::size_t>(task - 1)].test, cfg.effective_threads());
  std::map<std::string, std::pair<std::vector<double>, std::vector<ObjectLabel>>> by_cat;
  std::vector<double> all;
  std::vector<ObjectLabel> labels;
  for (const auto& r : round.records) {
    by_cat[r.category].first.push_back(r.object_score);
    by_cat[r.category].second.push_back(r.label);
    all.push_back(r.object_score);
    labels.push_back(r.label);
  }
  double sum = 0.0;
  for (const auto& [cat, v] : by_cat) {
    round.category_auroc[cat] = auroc(v.first, v.second);
    sum += round.category_auroc[cat];
  }
  round.mean_auroc = sum / static_cast<double>(by_cat.size());
  round.sample_auroc = auroc(all, labels);
  report.rounds.push_back(std::move(round));
  write_text(fs::path(out) / "eval.json", report_json(report, token_scores));
  std::cout << "mean O-AUROC " << report.rounds[0].mean_auroc << " (sample-pooled " << report.rounds[0].sample_auroc
            << ")\n";
  for (const auto& [cat, a] : report.rounds[0].category_auroc) std::cout << "  " << cat << " " << a << "\n";
  return kOk;
}

int cmd_bench(const RunConfig& cfg, std::string out, int repeats, const std::string& sizes, bool no_kaa) {
  if (out.empty()) out = (fs::path(cfg.out_dir) / "bench").string();
  BenchConfig bc;
  bc.hyper = cfg.hyper();
  bc.repeats = repeats;
  bc.include_kaa = !no_kaa;
  if (!sizes.empty()) {
    bc.sizes.clear();
    for (const auto& s : split_list(sizes)) bc.sizes.push_back(std::stoll(s));
  }
  prepare_dir(out, cfg);
  const BenchResult res = run_bench(bc);
  {
    std::ofstream csv(fs::path(out) / "bench.csv");
    write_bench_csv(res, csv);
  }
  nlohmann::json j;
  j["linear_r2"] = res.linear_r2;
  j["linear_doubling_ratios"] = doubling_ratios(res, "linear");
  j["quadratic_doubling_ratios"] = doubling_ratios(res, "quadratic");
  if (bc.include_kaa) j["kaa_doubling_ratios"] = doubling_ratios(res, "kaa");
  write_text(fs::path(out) / "bench.json", j.dump(2) + "\n");
  std::ifstream csv(fs::path(out) / "bench.csv");
  std::cout << csv.rdbuf() << "linear R^2 " << res.linear_r2 << "\n";
  return kOk;
}

int cmd_gradcheck(bool use_double, bool linear, bool corrupt, bool no_rpp) {
  GradcheckConfig gc;
  gc.use_kaa = !linear;
  gc.corrupt = corrupt;
  gc.include_rpp = !no_rpp;
  GradcheckReport rep;
  if (use_double) {
    rep = run_gradcheck<double>(gc);
  } else {
    gc.floor = 1e-3;
    gc.rel_tol = 1e-2;
    rep = run_gradcheck<float>(gc);
  }
  for (const auto& t : rep.tensors)
    std::printf("%-16s worst %-6lld analytic % .6e numeric % .6e rel %.3e\n", t.name.c_str(),
                static_cast<long long>(t.worst_index), t.analytic, t.numeric, t.rel_error);
  std::printf("%s: %zu coordinates, max relative error %.3e (tolerance %.1e, %s)\n", rep.passed ? "PASS" : "FAIL",
              rep.checked, rep.max_rel_error, rep.rel_tol, use_double ? "float64" : "float32");
  return rep.passed ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental point-cloud anomaly detection with kernel attention"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::string data, out, ablate_list, eps_list, resume, checkpoint, sizes;
  int task = 0, every = 0, repeats = 5;
  bool force = false, no_tokens = false, use_double = false, linear = false, corrupt = false, no_rpp = false,
       no_kaa = false;

  Common gen_c, train_c, cont_c, eval_c, bench_c;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic task stream as PLY files plus a manifest");
  gen_c.attach(gen);
  gen->add_option("-o,--out", out, "Dataset directory (default: data_dir)");
  gen->add_flag("--force", force, "Replace an existing dataset");

  auto* train = app.add_subcommand("train", "Train one task and write a checkpoint");
  train_c.attach(train);
  train->add_option("--data", data, "Dataset directory (default: generate in memory)");
  train->add_option("-o,--out", out, "Output directory");
  train->add_option("--task", task, "Task to train (1-based)")->default_val(1);
  train->add_option("--resume", resume, "Start from this checkpoint");
  train->add_option("--log-every", every, "Log every k-th epoch");

  auto* cont = app.add_subcommand("continual", "Run the class-incremental protocol");
  cont_c.attach(cont);
  cont->add_option("--data", data, "Dataset directory (default: generate in memory)");
  cont->add_option("-o,--out", out, "Output directory");
  cont->add_option("--ablate", ablate_list, "Comma list of rpp, kaa, kal variants to add");
  cont->add_option("--eps-sweep", eps_list, "Comma list of epsilon values to sweep");
  cont->add_option("--log-every", every, "Log every k-th epoch");
  cont->add_flag("--no-token-scores", no_tokens, "Omit per-token scores from report.json");

  auto* ev = app.add_subcommand("eval", "Score a cumulative test set with a checkpoint");
  eval_c.attach(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--data", data, "Dataset directory (default: generate in memory)");
  ev->add_option("-o,--out", out, "Output directory");
  ev->add_option("--task", task, "Evaluate the test set after this task (default: last)");
  ev->add_flag("--no-token-scores", no_tokens, "Omit per-token scores from eval.json");

  auto* bench = app.add_subcommand("bench", "Time eval forward passes against the token count");
  bench_c.attach(bench);
  bench->add_option("-o,--out", out, "Output directory");
  bench->add_option("--repeats", repeats, "Timed repeats per size")->default_val(5);
  bench->add_option("--sizes", sizes, "Comma list of token counts");
  bench->add_flag("--no-kaa", no_kaa, "Skip the advisor-attention variant");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the training gradient");
  grad->add_flag("--double", use_double, "Run in float64 at tolerance 1e-4");
  grad->add_flag("--linear", linear, "Check the plain linear-attention variant");
  grad->add_flag("--no-rpp", no_rpp, "Leave out the perturbation term");
  grad->add_flag("--corrupt", corrupt, "Bias one analytic entry (the check must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_c.resolve(), out, force);
    if (train->parsed()) return cmd_train(train_c.resolve(), data, out, task, resume, every);
    if (cont->parsed()) return cmd_continual(cont_c.resolve(), data, out, ablate_list, eps_list, every, !no_tokens);
    if (ev->parsed()) return cmd_eval(eval_c.resolve(), data, out, checkpoint, task, !no_tokens);
    if (bench->parsed()) return cmd_bench(bench_c.resolve(), out, repeats, sizes, no_kaa);
    if (grad->parsed()) return cmd_gradcheck(use_double, linear, corrupt, no_rpp);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
