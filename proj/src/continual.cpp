#include "ckad/continual.hpp"

#include "ckad/log.hpp"
#include "ckad/optimizer.hpp"
#include "ckad/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace ckad {

void TrainConfig::validate() const {
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (batch_size < 1) throw ArgumentError("batch_size must be positive");
  if (!(lr > 0.0) || !(lr_low > 0.0)) throw ArgumentError("learning rates must be positive");
  if (!(lr_drop_fraction >= 0.0 && lr_drop_fraction <= 1.0)) throw ArgumentError("lr_drop_fraction must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be non-negative");
  if (!(token_noise >= 0.0)) throw ArgumentError("token_noise must be non-negative");
  rpp.validate();
}

double TrainConfig::lr_at(int epoch) const {
  const auto drop = static_cast<int>(std::floor(static_cast<double>(epochs) * lr_drop_fraction));
  return epoch < drop ? lr : lr_low;
}

std::size_t DataAuditor::train_count(int task) const {
  if (task < 1 || task > static_cast<int>(stream_->tasks.size())) throw ArgumentError("no such task");
  return stream_->tasks[static_cast<std::size_t>(task - 1)].train.size();
}

const Sample& DataAuditor::train_sample(int task, std::size_t index) {
  if (task < 1 || task > static_cast<int>(stream_->tasks.size())) throw ArgumentError("no such task");
  const auto& train = stream_->tasks[static_cast<std::size_t>(task - 1)].train;
  if (index >= train.size()) throw ArgumentError("training sample index out of range");
  ++total_;
  if (active_ != 0 && task != active_) {
    ++foreign_;
    log::warn("continual", "foreign_read", "task " + std::to_string(active_) + " read data of task " + std::to_string(task));
  }
  return train[index];
}

std::uint64_t grouping_seed(const Sample& s) { return mix_seed(s.seed, 11); }

namespace {

struct CachedCloud {
  GroupedCloud grouped;
  MatrixXf tokens;
  float spread = 0.0f;
};

float token_spread(const MatrixXf& t) {
  const MatrixXf centered = t.rowwise() - t.colwise().mean();
  return std::sqrt(centered.squaredNorm() / static_cast<float>(std::max<Eigen::Index>(1, t.size())));
}

}  // namespace

std::vector<EpochRecord> train_task(Model<float>& model, const TrainView& data, const TrainConfig& cfg,
                                    const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const std::size_t count = data.size();
  if (count == 0) throw ArgumentError("train_task: task has no training clouds");

  const auto grouping = [&](const Sample& s) { return model.hyper().grouping(grouping_seed(s)); };
  std::vector<CachedCloud> clouds(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = data[i];
    if (s.label != ObjectLabel::normal) throw ArgumentError("train_task: anomalous cloud in training data: " + s.id);
    clouds[i].grouped = make_groups(*s.cloud, grouping(s));
    if (!cfg.train_embedder) {
      clouds[i].tokens = model.embed(clouds[i].grouped);
      clouds[i].spread = token_spread(clouds[i].tokens);
    }
  }

  auto& theta = model.params();
  const Eigen::Index total = theta.size();
  const ParamRange range{cfg.train_embedder ? Eigen::Index{0} : model.trunk_offset(), total};
  AdamW<float> opt(range, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(data.task()), 5));
  std::normal_distribution<float> noise;

  VectorXf good_params = theta;
  std::vector<AdvisorState> good_advisors = model.advisors();
  std::vector<EpochRecord> records;
  std::uint64_t step = 0;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double recon_sum = 0.0, rpp_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < count; start += batch) {
        const std::size_t stop = std::min(count, start + batch);
        std::vector<MatrixXf> inputs, targets;
        std::vector<EmbedCache<float>> embed_caches(stop - start);
        for (std::size_t j = start; j < stop; ++j) {
          CachedCloud& c = clouds[order[j]];
          MatrixXf clean;
          float spread = c.spread;
          if (cfg.train_embedder) {
            clean = model.embed(theta, c.grouped, &embed_caches[j - start]);
            spread = token_spread(clean);
          } else {
            clean = c.tokens;
          }
          MatrixXf noisy = clean;
          if (cfg.token_noise > 0.0) {
            const float sigma = static_cast<float>(cfg.token_noise) * spread;
            for (Eigen::Index k = 0; k < noisy.size(); ++k) noisy.data()[k] += sigma * noise(rng);
          }
          inputs.push_back(std::move(noisy));
          targets.push_back(std::move(clean));
        }
        PerturbationConfig pc = cfg.rpp;
        pc.seed = mix_seed(cfg.rpp.seed, static_cast<std::uint64_t>(data.task()), step);
        VectorXf grad = VectorXf::Zero(total);
        auto res = composite_objective(model, theta, inputs, targets, pc, range, ObjectiveOptions{}, &grad);
        if (!std::isfinite(res.total) || !grad.segment(range.begin, range.size()).allFinite())
          throw NumericError("non-finite training loss at task " + std::to_string(data.task()) + " epoch " +
                             std::to_string(epoch));
        if (cfg.train_embedder) {
          for (std::size_t b = 0; b < inputs.size(); ++b)
            model.embed_backward(theta, embed_caches[b], MatrixXf(res.d_inputs[b] + res.d_targets[b]), grad);
        }
        opt.step(theta, grad, lr);
        std::vector<const ForwardCache<float>*> caches;
        for (const auto& c : res.caches) caches.push_back(&c);
        model.update_advisors(caches);
        recon_sum += res.recon;
        rpp_sum += res.rpp;
        ++batches;
        ++step;
      }
      if (!theta.allFinite()) throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));
    } catch (const NumericError&) {
      theta = good_params;
      model.advisors() = good_advisors;
      throw;
    }
    good_params = theta;
    good_advisors = model.advisors();
    EpochRecord rec{data.task(), epoch, recon_sum / static_cast<double>(batches), rpp_sum / static_cast<double>(batches), lr};
    records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return records;
}

double object_score(const VectorXd& token_scores) {
  if (token_scores.size() == 0) throw ArgumentError("object_score: no tokens");
  const auto n = token_scores.size();
  const Eigen::Index k = std::max<Eigen::Index>(1, n / 100);
  std::vector<double> v(token_scores.data(), token_scores.data() + n);
  std::partial_sort(v.begin(), v.begin() + k, v.end(), std::greater<>());
  return std::accumulate(v.begin(), v.begin() + k, 0.0) / static_cast<double>(k);
}

SampleScore score_tokens(const Model<float>& model, const MatrixXf& tokens) {
  const MatrixXf out = model.forward(tokens, Mode::eval);
  SampleScore s;
  s.tokens = token_scores(tokens, out).cast<double>();
  if (!s.tokens.allFinite()) throw NumericError("non-finite token score");
  s.object = object_score(s.tokens);
  return s;
}

SampleScore score_sample(const Model<float>& model, const PointCloud& cloud, std::uint64_t fps_seed) {
  const GroupedCloud grouped = make_groups(cloud, model.hyper().grouping(fps_seed));
  return score_tokens(model, model.embed(grouped));
}

std::vector<SampleRecord> evaluate(const Model<float>& model, const std::vector<Sample>& samples, int threads) {
  std::vector<SampleRecord> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const Sample& s = samples[i];
    const SampleScore sc = score_sample(model, *s.cloud, grouping_seed(s));
    SampleRecord& r = out[i];
    r.id = s.id;
    r.category = s.category;
    r.task_origin = s.task;
    r.label = s.label;
    if (s.defect) r.defect = to_string(s.defect->kind);
    r.object_score = sc.object;
    r.token_scores.assign(sc.tokens.data(), sc.tokens.data() + sc.tokens.size());
  });
  return out;
}

double AnomalyReport::final_mean_auroc() const {
  if (rounds.empty()) throw ArgumentError("report has no evaluation rounds");
  return rounds.back().mean_auroc;
}

double AnomalyReport::final_sample_auroc() const {
  if (rounds.empty()) throw ArgumentError("report has no evaluation rounds");
  return rounds.back().sample_auroc;
}

double AnomalyReport::mean_forgetting(const TaskStream& stream, int task) const {
  if (rounds.empty()) throw ArgumentError("report has no evaluation rounds");
  if (task < 1 || task > static_cast<int>(stream.tasks.size())) throw ArgumentError("no such task");
  const auto& cats = stream.tasks[static_cast<std::size_t>(task - 1)].categories;
  double sum = 0.0;
  for (const auto& c : cats) sum += rounds.back().forgetting.at(c);
  return sum / static_cast<double>(cats.size());
}

ProtocolConfig ablate(ProtocolConfig cfg, const std::string& what) {
  if (what == "rpp") {
    cfg.train.rpp.lambda_rpp = 0.0;
  } else if (what == "kaa") {
    cfg.hyper.use_kaa = false;
  } else if (what == "kal") {
    cfg.hyper.use_kal = false;
  } else {
    throw ArgumentError("unknown ablation '" + what + "' (expected rpp, kaa or kal)");
  }
  cfg.label = "no_" + what;
  return cfg;
}

AnomalyReport run_protocol(const TaskStream& stream, const ProtocolConfig& cfg, DataAuditor* auditor) {
  cfg.hyper.validate();
  Model<float> model(cfg.hyper);
  return run_protocol(model, stream, cfg, auditor);
}

AnomalyReport run_protocol(Model<float>& model, const TaskStream& stream, const ProtocolConfig& cfg,
                           DataAuditor* auditor) {
  if (stream.tasks.empty()) throw ArgumentError("run_protocol: empty task stream");
  cfg.train.validate();
  DataAuditor local(stream);
  DataAuditor& audit = auditor ? *auditor : local;
  const std::size_t foreign_before = audit.foreign_reads();

  AnomalyReport report;
  report.label = cfg.label;
  ForgettingTracker tracker;
  for (const Task& task : stream.tasks) {
    audit.begin_task(task.id);
    try {
      auto epochs = train_task(model, TrainView(audit, task.id), cfg.train, cfg.on_epoch);
      report.epochs.insert(report.epochs.end(), epochs.begin(), epochs.end());
    } catch (...) {
      audit.end_task();
      throw;
    }
    audit.end_task();
    if (cfg.on_task_end) cfg.on_task_end(task.id, model);

    RoundReport round;
    round.after_task = task.id;
    round.records = evaluate(model, task.test, cfg.threads);
    std::map<std::string, std::pair<std::vector<double>, std::vector<ObjectLabel>>> per_cat;
    std::vector<double> all_scores;
    std::vector<ObjectLabel> all_labels;
    for (const auto& r : round.records) {
      per_cat[r.category].first.push_back(r.object_score);
      per_cat[r.category].second.push_back(r.label);
      all_scores.push_back(r.object_score);
      all_labels.push_back(r.label);
    }
    double sum = 0.0;
    for (const auto& [cat, sl] : per_cat) {
      const double a = auroc(sl.first, sl.second);
      round.category_auroc[cat] = a;
      tracker.record(cat, a);
      sum += a;
    }
    round.mean_auroc = sum / static_cast<double>(per_cat.size());
    round.sample_auroc = auroc(all_scores, all_labels);
    for (const auto& [cat, a] : round.category_auroc) round.forgetting[cat] = tracker.forgetting(cat);
    report.rounds.push_back(std::move(round));
  }
  report.foreign_reads = audit.foreign_reads() - foreign_before;
  return report;
}

std::string report_json(const AnomalyReport& report, bool with_token_scores) {
  using nlohmann::json;
  json j;
  j["label"] = report.label;
  j["foreign_reads"] = report.foreign_reads;
  json rounds = json::array();
  for (const auto& r : report.rounds) {
    json jr;
    jr["after_task"] = r.after_task;
    jr["mean_auroc"] = r.mean_auroc;
    jr["sample_auroc"] = r.sample_auroc;
    jr["category_auroc"] = r.category_auroc;
    jr["forgetting"] = r.forgetting;
    json recs = json::array();
    for (const auto& s : r.records) {
      json js{{"id", s.id},
              {"category", s.category},
              {"task_origin", s.task_origin},
              {"label", s.label == ObjectLabel::anomalous ? "anomalous" : "normal"},
              {"object_score", s.object_score}};
      if (!s.defect.empty()) js["defect"] = s.defect;
      if (with_token_scores) js["token_scores"] = s.token_scores;
      recs.push_back(std::move(js));
    }
    jr["records"] = std::move(recs);
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  json epochs = json::array();
  for (const auto& e : report.epochs)
    epochs.push_back({{"task", e.task}, {"epoch", e.epoch}, {"recon", e.recon}, {"rpp", e.rpp}, {"lr", e.lr}});
  j["epochs"] = std::move(epochs);
  if (!report.rounds.empty())
    j["summary"] = {{"final_mean_auroc", report.final_mean_auroc()},
                    {"final_sample_auroc", report.final_sample_auroc()}};
  return j.dump(2);
}

void write_task_table_csv(const std::vector<AnomalyReport>& reports, std::ostream& os) {
  std::size_t tasks = 0;
  for (const auto& r : reports) tasks = std::max(tasks, r.rounds.size());
  os << "config";
  for (std::size_t t = 1; t <= tasks; ++t) os << ",task_" << t;
  os << '\n';
  for (const auto& r : reports) {
    os << r.label;
    for (std::size_t t = 0; t < tasks; ++t) {
      os << ',';
      if (t < r.rounds.size()) os << r.rounds[t].mean_auroc;
    }
    os << '\n';
  }
}

void write_epoch_csv(const std::vector<EpochRecord>& epochs, std::ostream& os) {
  os << "task,epoch,recon_loss,rpp_loss,lr\n";
  for (const auto& e : epochs) os << e.task << ',' << e.epoch << ',' << e.recon << ',' << e.rpp << ',' << e.lr << '\n';
}

}  // namespace ckad
