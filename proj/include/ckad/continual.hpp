#pragma once

#include "ckad/metrics.hpp"
#include "ckad/model.hpp"
#include "ckad/rpp.hpp"
#include "ckad/synthgen.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ckad {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 4;
  double lr = 1e-4;
  double lr_low = 1e-5;
  double lr_drop_fraction = 0.8;  // lr_low from epoch floor(epochs * fraction) on
  double weight_decay = 0.01;
  /// Gaussian noise on input tokens, relative to each cloud's token spread.
  /// Targets stay clean.
  double token_noise = 0.0;
  bool train_embedder = false;
  PerturbationConfig rpp;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(int epoch) const;
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  double recon = 0.0;
  double rpp = 0.0;
  double lr = 0.0;
};

/// Single point of access to training clouds. Every read is attributed to the
/// task that is currently training; reads of another task's data are counted.
class DataAuditor {
 public:
  explicit DataAuditor(const TaskStream& stream) : stream_(&stream) {}

  void begin_task(int task) { active_ = task; }
  void end_task() { active_ = 0; }
  int active_task() const { return active_; }

  std::size_t train_count(int task) const;
  const Sample& train_sample(int task, std::size_t index);

  std::size_t total_reads() const { return total_; }
  std::size_t foreign_reads() const { return foreign_; }

 private:
  const TaskStream* stream_;
  int active_ = 0;
  std::size_t total_ = 0;
  std::size_t foreign_ = 0;
};

/// Training data of one task as seen through the auditor.
class TrainView {
 public:
  TrainView(DataAuditor& auditor, int task) : auditor_(&auditor), task_(task) {}
  int task() const { return task_; }
  std::size_t size() const { return auditor_->train_count(task_); }
  const Sample& operator[](std::size_t i) const { return auditor_->train_sample(task_, i); }

 private:
  DataAuditor* auditor_;
  int task_;
};

/// FPS start used for a sample's grouping, shared by training and scoring.
std::uint64_t grouping_seed(const Sample& s);

/// Trains the model on one task. On a non-finite loss the parameters and
/// advisor states of the last completed epoch are restored and NumericError
/// is thrown.
std::vector<EpochRecord> train_task(Model<float>& model, const TrainView& data, const TrainConfig& cfg,
                                    const std::function<void(const EpochRecord&)>& on_epoch = {});

struct SampleScore {
  double object = 0.0;
  VectorXd tokens;
};

/// Mean of the k largest token scores, k = max(1, n / 100).
double object_score(const VectorXd& token_scores);
SampleScore score_tokens(const Model<float>& model, const MatrixXf& tokens);
SampleScore score_sample(const Model<float>& model, const PointCloud& cloud, std::uint64_t fps_seed);

struct SampleRecord {
  std::string id;
  std::string category;
  int task_origin = 0;
  ObjectLabel label = ObjectLabel::normal;
  std::string defect;  // empty for normal clouds
  double object_score = 0.0;
  std::vector<double> token_scores;
};

/// Scores samples in parallel against a fixed model; record order follows `samples`.
std::vector<SampleRecord> evaluate(const Model<float>& model, const std::vector<Sample>& samples, int threads = 1);

struct RoundReport {
  int after_task = 0;
  std::vector<SampleRecord> records;
  std::map<std::string, double> category_auroc;
  double mean_auroc = 0.0;    // mean over categories
  double sample_auroc = 0.0;  // pooled over all samples
  std::map<std::string, double> forgetting;
};

struct AnomalyReport {
  std::string label = "full";
  std::vector<RoundReport> rounds;
  std::vector<EpochRecord> epochs;
  std::size_t foreign_reads = 0;

  double final_mean_auroc() const;
  double final_sample_auroc() const;
  /// Mean final forgetting over the categories of `task`.
  double mean_forgetting(const TaskStream& stream, int task) const;
};

struct ProtocolConfig {
  ModelHyper hyper;
  TrainConfig train;
  int threads = 1;
  std::string label = "full";
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int, const Model<float>&)> on_task_end;
};

/// "rpp" disables the perturbation term, "kaa" swaps advisor attention for
/// plain linear attention, "kal" removes the embedder attention layer.
ProtocolConfig ablate(ProtocolConfig cfg, const std::string& what);

AnomalyReport run_protocol(const TaskStream& stream, const ProtocolConfig& cfg, DataAuditor* auditor = nullptr);
/// Continues from an existing model (used by the CLI to resume or evaluate).
AnomalyReport run_protocol(Model<float>& model, const TaskStream& stream, const ProtocolConfig& cfg,
                           DataAuditor* auditor = nullptr);

std::string report_json(const AnomalyReport& report, bool with_token_scores = true);
/// One row per report: label followed by the mean AUROC after each task.
void write_task_table_csv(const std::vector<AnomalyReport>& reports, std::ostream& os);
void write_epoch_csv(const std::vector<EpochRecord>& epochs, std::ostream& os);

}  // namespace ckad
