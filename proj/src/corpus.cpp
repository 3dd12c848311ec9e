#include "lcrank/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "lcrank/tensor.hpp"

namespace lcrank {

using ojson = nlohmann::ordered_json;

std::string orientation_name(MetricOrientation m) {
  return m == MetricOrientation::higher_better ? "higher_better" : "lower_better";
}

MetricOrientation orientation_from(const std::string& name) {
  if (name == "higher_better") return MetricOrientation::higher_better;
  if (name == "lower_better") return MetricOrientation::lower_better;
  throw ValidationError("unknown metric_orientation \"" + name + "\"");
}

std::map<std::string, int> build_vocabulary(const std::vector<RunRecord>& records) {
  std::map<std::string, std::int64_t> counts;
  for (const RunRecord& r : records)
    for (const std::string& t : r.arch_tokens) ++counts[t];
  std::vector<std::pair<std::string, std::int64_t>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::map<std::string, int> vocab;
  for (std::size_t i = 0; i < order.size(); ++i) vocab[order[i].first] = static_cast<int>(i);
  return vocab;
}

std::vector<std::string> collect_dataset_ids(const std::vector<RunRecord>& records) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const RunRecord& r : records)
    if (seen.insert(r.dataset_id).second) ids.push_back(r.dataset_id);
  return ids;
}

namespace {

void validate_record(const RunRecord& r) {
  if (r.run_id.empty()) throw ValidationError("record with empty run_id");
  if (r.dataset_id.empty()) throw ValidationError("record " + r.run_id + " has empty dataset_id");
  if (r.curve.empty()) throw ValidationError("record " + r.run_id + " has an empty curve");
  for (double v : r.curve) {
    if (!std::isfinite(v)) throw ValidationError("record " + r.run_id + " has a non-finite curve value");
  }
  if (r.arch_tokens.empty()) throw ValidationError("record " + r.run_id + " has no architecture tokens");
  for (const auto& [k, v] : r.hparams) {
    if (k.empty()) throw ValidationError("record " + r.run_id + " has an empty hyperparameter name");
    if (!std::isfinite(v))
      throw ValidationError("record " + r.run_id + " has non-finite hyperparameter \"" + k + "\"");
  }
}

RunRecord parse_record(const ojson& j) {
  RunRecord r;
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.run_id = j.at("run_id").get<std::string>();
  for (const auto& t : j.at("arch_tokens")) r.arch_tokens.push_back(t.get<std::string>());
  for (const auto& [k, v] : j.at("hparams").items()) r.hparams.emplace_back(k, v.get<double>());
  for (const auto& v : j.at("curve")) r.curve.push_back(v.get<double>());
  r.metric_orientation = orientation_from(j.at("metric_orientation").get<std::string>());
  return r;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate_corpus(const Corpus& corpus) {
  if (corpus.schema_version != 1)
    throw ValidationError("unknown schema_version " + std::to_string(corpus.schema_version));
  std::unordered_set<std::string> run_ids;
  for (const RunRecord& r : corpus.records) {
    validate_record(r);
    if (!run_ids.insert(r.run_id).second) throw ValidationError("duplicate run_id \"" + r.run_id + "\"");
    for (const std::string& t : r.arch_tokens) {
      if (!corpus.vocabulary.count(t))
        throw ValidationError("record " + r.run_id + " uses token \"" + t + "\" missing from the vocabulary");
    }
  }
  const auto ids = collect_dataset_ids(corpus.records);
  if (std::set<std::string>(ids.begin(), ids.end()) !=
      std::set<std::string>(corpus.dataset_ids.begin(), corpus.dataset_ids.end())) {
    throw ValidationError("dataset_ids do not match the datasets present in the records");
  }
}

Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  Corpus corpus;
  std::string line;
  int line_no = 0;
  std::unordered_set<std::string> run_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    try {
      const int sv = j.at("schema_version").get<int>();
      if (sv != 1)
        throw ValidationError("line " + std::to_string(line_no) + ": unknown schema_version " +
                              std::to_string(sv));
      RunRecord r = parse_record(j);
      validate_record(r);
      if (!run_ids.insert(r.run_id).second)
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate run_id \"" + r.run_id + "\"");
      corpus.records.push_back(std::move(r));
    } catch (const ojson::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (corpus.records.empty()) throw ValidationError("empty corpus: " + path);
  corpus.vocabulary = build_vocabulary(corpus.records);
  corpus.dataset_ids = collect_dataset_ids(corpus.records);
  corpus.schema_version = 1;
  validate_corpus(corpus);
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  validate_corpus(corpus);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const RunRecord& r : corpus.records) {
    // Doubles are emitted with 17 significant digits so that a reload
    // reproduces every bit.
    out << "{\"schema_version\":1";
    out << ",\"dataset_id\":" << ojson(r.dataset_id).dump();
    out << ",\"run_id\":" << ojson(r.run_id).dump();
    out << ",\"arch_tokens\":[";
    for (std::size_t i = 0; i < r.arch_tokens.size(); ++i) {
      if (i) out << ',';
      out << ojson(r.arch_tokens[i]).dump();
    }
    out << "],\"hparams\":{";
    for (std::size_t i = 0; i < r.hparams.size(); ++i) {
      if (i) out << ',';
      out << ojson(r.hparams[i].first).dump() << ':' << format_double(r.hparams[i].second);
    }
    out << "},\"curve\":[";
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      if (i) out << ',';
      out << format_double(r.curve[i]);
    }
    out << "],\"metric_orientation\":\"" << orientation_name(r.metric_orientation) << "\"}\n";
  }
  if (!out.flush()) throw IoError("failed writing corpus file " + path);
}

std::vector<double> truncate(const RunRecord& record, int l) {
  if (l < 0 || l > record.epochs()) {
    throw std::out_of_range("truncate: length " + std::to_string(l) + " outside [0, " +
                            std::to_string(record.epochs()) + "] for run " + record.run_id);
  }
  return {record.curve.begin(), record.curve.begin() + l};
}

NormalizationStats compute_stats(const std::vector<RunRecord>& training_records) {
  NormalizationStats stats;
  for (const RunRecord& r : training_records) {
    auto it = stats.per_dataset.find(r.dataset_id);
    if (it == stats.per_dataset.end()) {
      DatasetStats ds;
      ds.min_value = *std::min_element(r.curve.begin(), r.curve.end());
      ds.max_value = *std::max_element(r.curve.begin(), r.curve.end());
      ds.orientation = r.metric_orientation;
      stats.per_dataset.emplace(r.dataset_id, ds);
    } else {
      DatasetStats& ds = it->second;
      if (ds.orientation != r.metric_orientation)
        throw ValidationError("dataset " + r.dataset_id + " mixes metric orientations");
      ds.min_value = std::min(ds.min_value, *std::min_element(r.curve.begin(), r.curve.end()));
      ds.max_value = std::max(ds.max_value, *std::max_element(r.curve.begin(), r.curve.end()));
    }
  }
  return stats;
}

std::vector<double> normalize(const NormalizationStats& stats, const RunRecord& record, int l) {
  const auto it = stats.per_dataset.find(record.dataset_id);
  if (it == stats.per_dataset.end())
    throw ValidationError("no normalization stats for dataset " + record.dataset_id);
  const DatasetStats& ds = it->second;
  if (!(ds.max_value > ds.min_value))
    throw ValidationError("degenerate dataset " + record.dataset_id + ": max equals min");
  const double span = ds.max_value - ds.min_value;
  std::vector<double> out = truncate(record, l);
  for (double& v : out) {
    double u = (v - ds.min_value) / span;
    if (record.metric_orientation == MetricOrientation::lower_better) u = 1.0 - u;
    v = std::min(1.0, std::max(0.0, u));
  }
  return out;
}

std::pair<std::vector<RunRecord>, std::vector<RunRecord>> lodo_split(const Corpus& corpus,
                                                                     const std::string& held_out) {
  if (std::find(corpus.dataset_ids.begin(), corpus.dataset_ids.end(), held_out) ==
      corpus.dataset_ids.end()) {
    throw ValidationError("unknown dataset_id \"" + held_out + "\"");
  }
  std::vector<RunRecord> train, held;
  for (const RunRecord& r : corpus.records) {
    (r.dataset_id == held_out ? held : train).push_back(r);
  }
  return {std::move(train), std::move(held)};
}

namespace {

const std::vector<std::string>& toy_vocabulary() {
  static const std::vector<std::string> tokens = {
      "conv1x1", "conv3x3", "conv5x5",  "sepconv3x3", "sepconv5x5", "dilconv3x3",
      "maxpool", "avgpool", "identity", "dense",      "dropout",    "skip"};
  return tokens;
}

}  // namespace

Corpus synth_generate(const SyntheticSpec& spec, std::vector<SynthTruth>* truth) {
  if (spec.n_datasets < 1 || spec.runs_per_dataset < 1 || spec.epochs < 1)
    throw ValidationError("synthetic spec counts must all be at least 1");
  if (!(spec.noise_sd >= 0.0)) throw ValidationError("synthetic spec noise_sd must be >= 0");
  if (spec.curve_family != CurveFamily::pow3)
    throw ValidationError("unsupported curve family");

  const auto& tokens = toy_vocabulary();
  const int V = static_cast<int>(tokens.size());
  Rng rng(spec.seed);

  // Fixed per-token and per-hyperparameter weights make the asymptote a
  // deterministic function of the model description.
  std::vector<double> w(static_cast<std::size_t>(V));
  for (double& x : w) x = rng.uniform(-0.8, 0.8);
  const double u_lr = rng.uniform(-0.3, 0.3);
  const double u_batch = rng.uniform(-0.3, 0.3);

  Corpus corpus;
  if (truth) truth->clear();
  for (int d = 0; d < spec.n_datasets; ++d) {
    const double offset = rng.uniform(0.3, 0.5);
    const double dscale = rng.uniform(0.3, 0.5);
    const std::string dataset_id = "ds" + std::to_string(d);
    for (int ri = 0; ri < spec.runs_per_dataset; ++ri) {
      RunRecord r;
      r.dataset_id = dataset_id;
      r.run_id = dataset_id + "-r" + std::to_string(ri);
      std::vector<int> present(static_cast<std::size_t>(V), 0);
      for (int t = 0; t < 8; ++t) {
        const int ti = static_cast<int>(rng.uniform_int(V));
        r.arch_tokens.push_back(tokens[static_cast<std::size_t>(ti)]);
        present[static_cast<std::size_t>(ti)] = 1;
      }
      const double lr = rng.log_uniform(1e-4, 1e-1);
      const double batch = static_cast<double>(16 << rng.uniform_int(5));
      r.hparams.emplace_back("learning_rate", lr);
      r.hparams.emplace_back("batch_size", batch);

      double z = 0.0;
      for (int i = 0; i < V; ++i) z += w[static_cast<std::size_t>(i)] * present[static_cast<std::size_t>(i)];
      z += u_lr * (std::log10(lr) + 2.5);
      z += u_batch * (std::log2(batch) - 6.0);
      const double asymptote = offset + dscale / (1.0 + std::exp(-z));

      const double y_start = rng.uniform(0.05, 0.15);
      const double alpha = rng.uniform(0.3, 1.0);
      r.curve.resize(static_cast<std::size_t>(spec.epochs));
      for (int t = 1; t <= spec.epochs; ++t) {
        double y = asymptote - (asymptote - y_start) * std::pow(static_cast<double>(t), -alpha);
        if (spec.noise_sd > 0.0) y += rng.gaussian(0.0, spec.noise_sd);
        r.curve[static_cast<std::size_t>(t - 1)] = std::min(1.0, std::max(0.0, y));
      }
      if (truth) truth->push_back(SynthTruth{asymptote, y_start, alpha});
      corpus.records.push_back(std::move(r));
    }
  }
  corpus.vocabulary = build_vocabulary(corpus.records);
  corpus.dataset_ids = collect_dataset_ids(corpus.records);
  corpus.schema_version = 1;
  return corpus;
}

}  // namespace lcrank
