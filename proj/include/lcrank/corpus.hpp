#pragma once

// Learning-curve corpus: record model, JSONL persistence, validation,
// per-dataset normalization, leave-one-dataset-out splits, and a seeded
// synthetic generator. A corpus is immutable once built and safe to share
// read-only across threads.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lcrank {

// Error taxonomy used across the library; the CLI maps these to exit codes.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 17-significant-digit decimal form (round-trip safe) shared by the JSONL
// and CSV writers.
std::string format_double(double v);

enum class MetricOrientation { higher_better, lower_better };

std::string orientation_name(MetricOrientation m);
MetricOrientation orientation_from(const std::string& name);

struct RunRecord {
  std::string dataset_id;
  std::string run_id;
  std::vector<std::string> arch_tokens;
  std::vector<std::pair<std::string, double>> hparams;  // insertion-ordered
  std::vector<double> curve;  // y_1..y_L, one value per epoch
  MetricOrientation metric_orientation = MetricOrientation::higher_better;

  int epochs() const { return static_cast<int>(curve.size()); }
  bool operator==(const RunRecord&) const = default;
};

struct Corpus {
  std::vector<RunRecord> records;
  std::map<std::string, int> vocabulary;  // token -> index, frequency order
  std::vector<std::string> dataset_ids;   // order of first appearance
  int schema_version = 1;

  bool operator==(const Corpus&) const = default;
};

// Tokens indexed by descending corpus frequency, ties broken lexicographically.
std::map<std::string, int> build_vocabulary(const std::vector<RunRecord>& records);
std::vector<std::string> collect_dataset_ids(const std::vector<RunRecord>& records);
// Checks every record invariant plus corpus-level consistency; throws
// ValidationError naming the offending record.
void validate_corpus(const Corpus& corpus);

Corpus load_jsonl(const std::string& path);
void save_jsonl(const Corpus& corpus, const std::string& path);

// First l curve values; l = 0 is the architecture-only case.
std::vector<double> truncate(const RunRecord& record, int l);

struct DatasetStats {
  double min_value = 0.0;
  double max_value = 0.0;
  MetricOrientation orientation = MetricOrientation::higher_better;

  bool operator==(const DatasetStats&) const = default;
};

struct NormalizationStats {
  std::map<std::string, DatasetStats> per_dataset;

  bool operator==(const NormalizationStats&) const = default;
};

// Min/max of all curve values per dataset over the given training records.
NormalizationStats compute_stats(const std::vector<RunRecord>& training_records);

// First l values mapped to [0,1] with higher-better orientation:
// v -> (v - min)/(max - min), flipped for lower_better, clipped to [0,1].
std::vector<double> normalize(const NormalizationStats& stats, const RunRecord& record, int l);

std::pair<std::vector<RunRecord>, std::vector<RunRecord>> lodo_split(const Corpus& corpus,
                                                                     const std::string& held_out);

enum class CurveFamily { pow3 };

struct SyntheticSpec {
  int n_datasets = 1;
  int runs_per_dataset = 1;
  int epochs = 1;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  CurveFamily curve_family = CurveFamily::pow3;
};

// Ground truth of one generated run, in generation order.
struct SynthTruth {
  double asymptote = 0.0;
  double y_start = 0.0;
  double alpha = 0.0;
};

// Power-law curves y_t = c - (c - y_start) * t^(-alpha) with a per-dataset
// offset/scale on the asymptote and an architecture- and
// hyperparameter-dependent asymptote, so ranking from the model description
// alone is learnable. Deterministic under seed.
Corpus synth_generate(const SyntheticSpec& spec, std::vector<SynthTruth>* truth = nullptr);

}  // namespace lcrank
