#include "lcrank/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace lcrank {

using ojson = nlohmann::ordered_json;

std::string curve_encoder_name(CurveEncoderVariant v) {
  return v == CurveEncoderVariant::conv_global_max ? "conv_global_max" : "best_value_only";
}

CurveEncoderVariant curve_encoder_from(const std::string& name) {
  if (name == "conv_global_max") return CurveEncoderVariant::conv_global_max;
  if (name == "best_value_only") return CurveEncoderVariant::best_value_only;
  throw ValidationError("unknown curve encoder variant \"" + name + "\"");
}

void ModelConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
  if (!(perf_head_weight >= 0.0)) throw ValidationError("perf_head_weight must be >= 0");
  if (curve_kernel_sizes.empty()) throw ValidationError("curve_kernel_sizes must not be empty");
  for (int k : curve_kernel_sizes)
    if (k < 1) throw ValidationError("curve kernel sizes must be >= 1");
  if (filters_per_kernel < 1 || arch_embed_dim < 1 || arch_hidden_dim < 1 || dataset_embed_dim < 1 ||
      combiner_hidden < 1) {
    throw ValidationError("model dimensions must all be >= 1");
  }
  if (steps < 1 || pairs_per_step < 1 || rec_samples_per_step < 1)
    throw ValidationError("training counts must all be >= 1");
  if (!(adam_learning_rate > 0.0)) throw ValidationError("adam_learning_rate must be > 0");
}

int RankerParams::curve_feature_dim() const {
  if (config.curve_encoder_variant == CurveEncoderVariant::best_value_only) return 1;
  return static_cast<int>(config.curve_kernel_sizes.size()) * config.filters_per_kernel;
}

int RankerParams::combiner_input_dim() const {
  return curve_feature_dim() + config.arch_hidden_dim + config.dataset_embed_dim +
         static_cast<int>(hparam_names.size());
}

RankerParams RankerParams::init(const ModelConfig& config, int curve_length,
                                std::map<std::string, int> vocabulary,
                                std::vector<std::string> hparam_names,
                                std::vector<std::string> dataset_names, NormalizationStats stats) {
  config.validate();
  if (vocabulary.empty()) throw ValidationError("ranker needs a nonempty vocabulary");
  if (dataset_names.empty()) throw ValidationError("ranker needs at least one dataset");
  RankerParams p;
  p.config = config;
  p.curve_length = curve_length;
  p.vocabulary = std::move(vocabulary);
  p.hparam_names = std::move(hparam_names);
  p.dataset_names = std::move(dataset_names);
  p.stats = std::move(stats);

  const int F = config.filters_per_kernel;
  const int E = config.arch_embed_dim;
  const int H = config.arch_hidden_dim;
  const int V = static_cast<int>(p.vocabulary.size());
  const int D = static_cast<int>(p.dataset_names.size());

  Rng rng(mix_seed(config.seed, 0));
  for (int k : config.curve_kernel_sizes) {
    p.conv_kernels.push_back(glorot_uniform({k, 1, F}, k, F, rng));
    p.conv_biases.push_back(Tensor::zeros({F}, true));
  }
  p.arch_embedding = uniform_init({V, E}, -0.1, 0.1, rng);
  p.sos_embedding = uniform_init({1, E}, -0.1, 0.1, rng);
  p.encoder = LstmParams::init(E, H, rng);
  p.decoder = LstmParams::init(E, H, rng);
  p.attn_enc = glorot_uniform({H, H}, H, H, rng);
  p.attn_dec = glorot_uniform({H, H}, H, H, rng);
  p.attn_v = glorot_uniform({H, 1}, H, 1, rng);
  p.out_proj_w = glorot_uniform({2 * H, V}, 2 * H, V, rng);
  p.out_proj_b = Tensor::zeros({1, V}, true);
  p.dataset_embedding = uniform_init({D, config.dataset_embed_dim}, -0.1, 0.1, rng);
  const int in = p.combiner_input_dim();
  p.combiner_w = glorot_uniform({in, config.combiner_hidden}, in, config.combiner_hidden, rng);
  p.combiner_b = Tensor::zeros({1, config.combiner_hidden}, true);
  p.score_w = glorot_uniform({config.combiner_hidden, 1}, config.combiner_hidden, 1, rng);
  p.score_b = Tensor::zeros({1, 1}, true);
  p.perf_w = glorot_uniform({config.combiner_hidden, 1}, config.combiner_hidden, 1, rng);
  p.perf_b = Tensor::zeros({1, 1}, true);
  return p;
}

std::vector<Tensor*> RankerParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> RankerParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    const std::string k = std::to_string(config.curve_kernel_sizes[i]);
    out.emplace_back("conv_k" + k + ".kernel", &conv_kernels[i]);
    out.emplace_back("conv_k" + k + ".bias", &conv_biases[i]);
  }
  out.emplace_back("arch_embedding", &arch_embedding);
  out.emplace_back("sos_embedding", &sos_embedding);
  for (auto& nt : encoder.named_tensors("encoder")) out.push_back(nt);
  for (auto& nt : decoder.named_tensors("decoder")) out.push_back(nt);
  out.emplace_back("attn_enc", &attn_enc);
  out.emplace_back("attn_dec", &attn_dec);
  out.emplace_back("attn_v", &attn_v);
  out.emplace_back("out_proj_w", &out_proj_w);
  out.emplace_back("out_proj_b", &out_proj_b);
  out.emplace_back("dataset_embedding", &dataset_embedding);
  out.emplace_back("combiner_w", &combiner_w);
  out.emplace_back("combiner_b", &combiner_b);
  out.emplace_back("score_w", &score_w);
  out.emplace_back("score_b", &score_b);
  out.emplace_back("perf_w", &perf_w);
  out.emplace_back("perf_b", &perf_b);
  return out;
}

int RankerParams::dataset_index(const std::string& id) const {
  const auto it = std::find(dataset_names.begin(), dataset_names.end(), id);
  return it == dataset_names.end() ? -1 : static_cast<int>(it - dataset_names.begin());
}

int RankerParams::ensure_dataset(const std::string& id) {
  const int known = dataset_index(id);
  if (known >= 0) return known;
  const int D = dataset_embedding.rows();
  const int De = dataset_embedding.cols();
  Tensor grown = Tensor::zeros({D + 1, De}, true);
  std::copy(dataset_embedding.values.begin(), dataset_embedding.values.end(), grown.values.begin());
  Rng rng(mix_seed(config.seed, 0xDA7A0000ULL + static_cast<std::uint64_t>(D)));
  for (int j = 0; j < De; ++j) grown.at(D, j) = rng.uniform(-0.1, 0.1);
  dataset_embedding = std::move(grown);
  dataset_names.push_back(id);
  return D;
}

bool RankerParams::all_finite() const {
  for (const auto& [name, t] : const_cast<RankerParams*>(this)->named_tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

EncodedInput encode_input(const RunRecord& record, int l, RankerParams& params,
                          const NormalizationStats* stats_override) {
  EncodedInput x;
  x.curve = normalize(stats_override ? *stats_override : params.stats, record, l);
  x.arch_tokens.reserve(record.arch_tokens.size());
  for (const std::string& tok : record.arch_tokens) {
    const auto it = params.vocabulary.find(tok);
    if (it == params.vocabulary.end())
      throw ValidationError("unknown token \"" + tok + "\" in run " + record.run_id);
    x.arch_tokens.push_back(it->second);
  }
  x.dataset_index = params.ensure_dataset(record.dataset_id);
  x.hparams.reserve(params.hparam_names.size());
  for (const std::string& name : params.hparam_names) {
    const auto it = std::find_if(record.hparams.begin(), record.hparams.end(),
                                 [&](const auto& kv) { return kv.first == name; });
    if (it == record.hparams.end())
      throw ValidationError("run " + record.run_id + " is missing hyperparameter \"" + name + "\"");
    double v = it->second;
    if (std::find(params.config.hparam_log_keys.begin(), params.config.hparam_log_keys.end(), name) !=
        params.config.hparam_log_keys.end()) {
      if (!(v > 0.0))
        throw ValidationError("run " + record.run_id + " has non-positive log-scaled hyperparameter \"" +
                              name + "\"");
      v = std::log10(v);
    }
    x.hparams.push_back(v);
  }
  return x;
}

Var encode_curve(Graph& g, const std::vector<double>& curve, RankerParams& params) {
  const int l = static_cast<int>(curve.size());
  const ModelConfig& cfg = params.config;
  if (cfg.curve_encoder_variant == CurveEncoderVariant::best_value_only) {
    const double best = l == 0 ? 0.0 : *std::max_element(curve.begin(), curve.end());
    return g.constant(Tensor({1}, {best}));
  }
  const int F = cfg.filters_per_kernel;
  std::vector<Var> blocks;
  for (std::size_t ki = 0; ki < cfg.curve_kernel_sizes.size(); ++ki) {
    const int k = cfg.curve_kernel_sizes[ki];
    if (l >= k && l >= 1) {
      Var signal = g.constant(Tensor({l, 1}, std::vector<double>(curve)));
      Var conv = g.conv1d_valid(signal, g.leaf(params.conv_kernels[ki]), g.leaf(params.conv_biases[ki]));
      blocks.push_back(g.global_max_pool(conv));
    } else {
      blocks.push_back(g.constant(Tensor::zeros({F})));
    }
  }
  return blocks.size() == 1 ? blocks[0] : g.concat(blocks, 0);
}

ArchEncoding encode_arch(Graph& g, const std::vector<int>& tokens, RankerParams& params) {
  if (tokens.empty()) throw ValidationError("architecture token sequence is empty");
  Var rows = g.rows_lookup(g.leaf(params.arch_embedding), tokens);
  std::vector<Var> steps;
  steps.reserve(tokens.size());
  for (int t = 0; t < static_cast<int>(tokens.size()); ++t) steps.push_back(g.slice(rows, 0, t, 1));
  LstmTrace trace = lstm_forward(g, steps, params.encoder, 1);
  return ArchEncoding{trace.final_state.h, trace.final_state.c, trace.outputs};
}

Var encode_dataset(Graph& g, int dataset_index, RankerParams& params) {
  return g.embedding_lookup(g.leaf(params.dataset_embedding), dataset_index);
}

namespace {

// Sliding windows of every curve stacked into one constant matrix so the
// whole batch convolution is a single matmul.
Tensor stack_windows(const std::vector<EncodedInput>& xs, int l, int k) {
  const int per_run = l - k + 1;
  const int B = static_cast<int>(xs.size());
  Tensor w = Tensor::zeros({B * per_run, k});
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < per_run; ++t)
      for (int i = 0; i < k; ++i)
        w.at(b * per_run + t, i) = xs[static_cast<std::size_t>(b)].curve[static_cast<std::size_t>(t + i)];
  return w;
}

Var batch_curve_features(Graph& g, const std::vector<EncodedInput>& xs, int l, RankerParams& params) {
  const ModelConfig& cfg = params.config;
  const int B = static_cast<int>(xs.size());
  if (cfg.curve_encoder_variant == CurveEncoderVariant::best_value_only) {
    Tensor best = Tensor::zeros({B, 1});
    for (int b = 0; b < B; ++b) {
      const auto& c = xs[static_cast<std::size_t>(b)].curve;
      best.at(b, 0) = c.empty() ? 0.0 : *std::max_element(c.begin(), c.end());
    }
    return g.constant(std::move(best));
  }
  const int F = cfg.filters_per_kernel;
  std::vector<Var> blocks;
  for (std::size_t ki = 0; ki < cfg.curve_kernel_sizes.size(); ++ki) {
    const int k = cfg.curve_kernel_sizes[ki];
    if (l >= k && l >= 1) {
      Var windows = g.constant(stack_windows(xs, l, k));
      Var kernel = g.reshape(g.leaf(params.conv_kernels[ki]), {k, F});
      Var bias = g.reshape(g.leaf(params.conv_biases[ki]), {1, F});
      Var conv = g.add_rows(g.matmul(windows, kernel), bias);
      blocks.push_back(g.segment_max_pool(conv, l - k + 1));
    } else {
      blocks.push_back(g.constant(Tensor::zeros({B, F})));
    }
  }
  return blocks.size() == 1 ? blocks[0] : g.concat(blocks, 1);
}

// Architecture encoder over the whole batch, grouped by sequence length so
// each group runs as one batched LSTM.
Var batch_arch_features(Graph& g, const std::vector<EncodedInput>& xs, RankerParams& params) {
  const int B = static_cast<int>(xs.size());
  const int E = params.config.arch_embed_dim;
  std::map<int, std::vector<int>> buckets;  // sequence length -> batch indices
  for (int b = 0; b < B; ++b) {
    const auto& toks = xs[static_cast<std::size_t>(b)].arch_tokens;
    if (toks.empty()) throw ValidationError("architecture token sequence is empty");
    buckets[static_cast<int>(toks.size())].push_back(b);
  }
  Var table = g.leaf(params.arch_embedding);
  std::vector<Var> bucket_finals;
  std::vector<int> order;  // batch index per concatenated row
  for (const auto& [len, members] : buckets) {
    std::vector<Var> steps;
    steps.reserve(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      std::vector<int> token_col;
      token_col.reserve(members.size());
      for (int b : members)
        token_col.push_back(xs[static_cast<std::size_t>(b)].arch_tokens[static_cast<std::size_t>(t)]);
      steps.push_back(g.rows_lookup(table, token_col));
    }
    (void)E;
    LstmTrace trace = lstm_forward(g, steps, params.encoder, static_cast<int>(members.size()));
    bucket_finals.push_back(trace.final_state.h);
    order.insert(order.end(), members.begin(), members.end());
  }
  Var stacked = bucket_finals.size() == 1 ? bucket_finals[0] : g.concat(bucket_finals, 0);
  bool identity = true;
  for (int i = 0; i < B; ++i)
    if (order[static_cast<std::size_t>(i)] != i) identity = false;
  if (identity) return stacked;
  // order[row] = batch index; invert to gather rows back into batch order.
  std::vector<int> perm(static_cast<std::size_t>(B));
  for (int row = 0; row < B; ++row) perm[static_cast<std::size_t>(order[static_cast<std::size_t>(row)])] = row;
  return g.rows_lookup(stacked, perm);
}

}  // namespace

BatchOutputs build_batch(Graph& g, const std::vector<EncodedInput>& xs, RankerParams& params) {
  if (xs.empty()) throw ValidationError("empty batch");
  const int B = static_cast<int>(xs.size());
  const int l = static_cast<int>(xs[0].curve.size());
  for (const EncodedInput& x : xs) {
    if (static_cast<int>(x.curve.size()) != l)
      throw ValidationError("batch mixes curve lengths " + std::to_string(l) + " and " +
                            std::to_string(x.curve.size()));
  }
  std::vector<Var> parts;
  parts.push_back(batch_curve_features(g, xs, l, params));
  parts.push_back(batch_arch_features(g, xs, params));

  std::vector<int> ds_idx;
  ds_idx.reserve(xs.size());
  for (const EncodedInput& x : xs) ds_idx.push_back(x.dataset_index);
  parts.push_back(g.rows_lookup(g.leaf(params.dataset_embedding), ds_idx));

  const int Hp = static_cast<int>(params.hparam_names.size());
  if (Hp > 0) {
    Tensor hp = Tensor::zeros({B, Hp});
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < Hp; ++j) hp.at(b, j) = xs[static_cast<std::size_t>(b)].hparams[static_cast<std::size_t>(j)];
    parts.push_back(g.constant(std::move(hp)));
  }

  Var joined = g.concat(parts, 1);
  Var hidden = g.tanh(g.add_rows(g.matmul(joined, g.leaf(params.combiner_w)), g.leaf(params.combiner_b)));
  Var scores = g.add_rows(g.matmul(hidden, g.leaf(params.score_w)), g.leaf(params.score_b));
  Var perf = g.add_rows(g.matmul(hidden, g.leaf(params.perf_w)), g.leaf(params.perf_b));
  return BatchOutputs{scores, perf};
}

double score(const EncodedInput& x, RankerParams& params) {
  Graph g;
  return g.value(build_batch(g, {x}, params).scores).values[0];
}

std::vector<double> batch_score(const std::vector<EncodedInput>& xs, RankerParams& params) {
  Graph g;
  return g.value(build_batch(g, xs, params).scores).values;
}

double pair_probability(double f_i, double f_j) {
  const double d = f_i - f_j;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

double pair_target(double final_i, double final_j) {
  if (final_i > final_j) return 1.0;
  if (final_i < final_j) return 0.0;
  return 0.5;
}

double loss_ce_value(const std::vector<std::pair<double, double>>& target_and_phat) {
  if (target_and_phat.empty()) throw ValidationError("cross-entropy over an empty pair set");
  double sum = 0.0;
  for (const auto& [t, p] : target_and_phat) {
    const double pc = std::min(1.0 - 1e-12, std::max(1e-12, p));
    sum += -t * std::log(pc) - (1.0 - t) * std::log(1.0 - pc);
  }
  return sum / static_cast<double>(target_and_phat.size());
}

Var loss_rec(Graph& g, const std::vector<int>& tokens, const ArchEncoding& enc, RankerParams& params) {
  if (tokens.empty()) throw ValidationError("reconstruction needs a nonempty token sequence");
  const int T = static_cast<int>(tokens.size());
  const int V = static_cast<int>(params.vocabulary.size());

  Var enc_concat = enc.step_outputs.size() == 1 ? enc.step_outputs[0] : g.concat(enc.step_outputs, 0);
  Var enc_proj = g.matmul(enc_concat, g.leaf(params.attn_enc));  // [T x H]
  Var table = g.leaf(params.arch_embedding);

  LstmStepState state{enc.embedding, enc.final_cell};
  Var x = g.leaf(params.sos_embedding);
  Var sum;
  for (int t = 0; t < T; ++t) {
    state = lstm_cell(g, x, state, params.decoder);
    Var dproj = g.matmul(state.h, g.leaf(params.attn_dec));                    // [1 x H]
    Var escore = g.matmul(g.tanh(g.add_rows(enc_proj, dproj)), g.leaf(params.attn_v));  // [T x 1]
    Var weights = g.softmax(g.reshape(escore, {1, T}));                        // [1 x T]
    Var context = g.matmul(weights, enc_concat);                               // [1 x H]
    Var logits = g.add_rows(g.matmul(g.concat({state.h, context}, 1), g.leaf(params.out_proj_w)),
                            g.leaf(params.out_proj_b));                        // [1 x V]
    // log-sum-exp cross-entropy on the true token
    Var mx = g.reduce_max(logits);
    Var lse = g.add(g.log(g.reduce_sum(g.exp(g.sub(logits, mx)))), mx);
    Tensor onehot = Tensor::zeros({1, V});
    onehot.values[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)])] = 1.0;
    Var truth = g.reduce_sum(g.mul(logits, g.constant(std::move(onehot))));
    Var step_loss = g.sub(lse, truth);
    sum = t == 0 ? step_loss : g.add(sum, step_loss);
    if (t + 1 < T) {
      x = g.rows_lookup(table, {tokens[static_cast<std::size_t>(t)]});  // teacher forcing
    }
  }
  return g.scale(sum, 1.0 / static_cast<double>(T));
}

LossParts build_training_loss(Graph& g, RankerParams& params, const std::vector<EncodedInput>& xs,
                              const std::vector<PairExample>& pairs, const std::vector<int>& rec_runs,
                              const std::vector<double>& final_targets) {
  if (pairs.empty()) throw ValidationError("no training pairs supplied");
  BatchOutputs batch = build_batch(g, xs, params);

  const int P = static_cast<int>(pairs.size());
  std::vector<int> li, rj;
  Tensor targets = Tensor::zeros({P, 1});
  li.reserve(pairs.size());
  rj.reserve(pairs.size());
  for (int p = 0; p < P; ++p) {
    li.push_back(pairs[static_cast<std::size_t>(p)].i);
    rj.push_back(pairs[static_cast<std::size_t>(p)].j);
    targets.at(p, 0) = pairs[static_cast<std::size_t>(p)].target;
  }
  Var diff = g.sub(g.rows_lookup(batch.scores, li), g.rows_lookup(batch.scores, rj));
  Var phat = g.clamp(g.sigmoid(diff), 1e-12, 1.0 - 1e-12);
  Var t = g.constant(std::move(targets));
  Var one = g.constant(Tensor::full({P, 1}, 1.0));
  Var ce_terms = g.scale(
      g.add(g.mul(t, g.log(phat)), g.mul(g.sub(one, t), g.log(g.sub(one, phat)))), -1.0);
  Var ce = g.mean(ce_terms);

  Var rec;
  if (rec_runs.empty()) {
    rec = g.constant(Tensor::scalar(0.0));
  } else {
    Var acc;
    for (std::size_t k = 0; k < rec_runs.size(); ++k) {
      const EncodedInput& x = xs[static_cast<std::size_t>(rec_runs[k])];
      ArchEncoding enc = encode_arch(g, x.arch_tokens, params);
      Var one_rec = loss_rec(g, x.arch_tokens, enc, params);
      acc = k == 0 ? one_rec : g.add(acc, one_rec);
    }
    rec = g.scale(acc, 1.0 / static_cast<double>(rec_runs.size()));
  }

  LossParts parts;
  parts.ce = ce;
  parts.rec = rec;
  parts.total = g.add(g.scale(ce, params.config.alpha), g.scale(rec, 1.0 - params.config.alpha));
  if (params.config.perf_head_weight > 0.0) {
    if (static_cast<int>(final_targets.size()) != static_cast<int>(xs.size()))
      throw ValidationError("final-performance targets must cover the whole batch");
    Tensor tgt = Tensor::zeros({static_cast<int>(xs.size()), 1});
    for (std::size_t b = 0; b < final_targets.size(); ++b) tgt.values[b] = final_targets[b];
    Var d = g.sub(batch.perf_raw, g.constant(std::move(tgt)));
    parts.perf = g.mean(g.mul(d, d));
    parts.total = g.add(parts.total, g.scale(parts.perf, params.config.perf_head_weight));
  }
  return parts;
}

double predict_final(const EncodedInput& x, RankerParams& params,
                     const std::vector<double>& completed_finals,
                     std::optional<double> best_observed) {
  Graph g;
  const double raw = g.value(build_batch(g, {x}, params).perf_raw).values[0];
  if (completed_finals.empty()) return raw;
  double cap = 0.0;
  for (double f : completed_finals) cap += f;
  cap /= static_cast<double>(completed_finals.size());
  double v = std::min(raw, cap);
  if (best_observed) v = std::max(v, *best_observed);  // observed floor beats the cap
  return v;
}

namespace {

std::vector<std::string> shared_hparam_names(const std::vector<RunRecord>& records) {
  std::vector<std::string> names;
  for (const auto& [k, v] : records.front().hparams) names.push_back(k);
  for (const RunRecord& r : records) {
    if (r.hparams.size() != names.size())
      throw ValidationError("run " + r.run_id + " breaks the corpus-wide hyperparameter dimension");
    for (const std::string& n : names) {
      if (std::find_if(r.hparams.begin(), r.hparams.end(),
                       [&](const auto& kv) { return kv.first == n; }) == r.hparams.end())
        throw ValidationError("run " + r.run_id + " is missing hyperparameter \"" + n + "\"");
    }
  }
  return names;
}

std::vector<std::pair<int, int>> ordered_pair_pool(const std::vector<RunRecord>& records,
                                                   bool cross_dataset) {
  std::vector<std::pair<int, int>> pool;
  const int n = static_cast<int>(records.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!cross_dataset && records[static_cast<std::size_t>(i)].dataset_id !=
                                records[static_cast<std::size_t>(j)].dataset_id)
        continue;
      pool.emplace_back(i, j);
    }
  return pool;
}

}  // namespace

RankerParams train_fl(const std::vector<RunRecord>& train_records, int l, const ModelConfig& config,
                      const NormalizationStats* stats_override,
                      const std::map<std::string, int>* vocab_override,
                      std::vector<TrainingMetrics>* metrics_out) {
  config.validate();
  if (train_records.empty()) throw ValidationError("train_fl: no training records");
  if (l < 0) throw std::out_of_range("train_fl: negative curve length");

  NormalizationStats stats = stats_override ? *stats_override : compute_stats(train_records);
  std::map<std::string, int> vocab = vocab_override ? *vocab_override : build_vocabulary(train_records);
  RankerParams params = RankerParams::init(config, l, std::move(vocab), shared_hparam_names(train_records),
                                           collect_dataset_ids(train_records), std::move(stats));

  const int n = static_cast<int>(train_records.size());
  std::vector<EncodedInput> inputs;
  std::vector<double> finals;
  inputs.reserve(train_records.size());
  finals.reserve(train_records.size());
  for (const RunRecord& r : train_records) {
    inputs.push_back(encode_input(r, l, params));
    finals.push_back(normalize(params.stats, r, r.epochs()).back());
  }

  const auto pool = ordered_pair_pool(train_records, config.cross_dataset_pairs);
  if (pool.empty()) throw ValidationError("no valid training pair (need >= 2 runs in some dataset)");

  auto all_tensors = params.tensors();
  AdamState adam(all_tensors, config.adam_learning_rate);
  Rng rng(mix_seed(config.seed, 1));
  if (metrics_out) metrics_out->clear();

  std::vector<int> slot_of(static_cast<std::size_t>(n), -1);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<EncodedInput> batch;
    std::vector<double> batch_finals;
    std::vector<PairExample> pairs;
    std::vector<int> touched;
    pairs.reserve(static_cast<std::size_t>(config.pairs_per_step));
    auto slot = [&](int run) {
      int& s = slot_of[static_cast<std::size_t>(run)];
      if (s < 0) {
        s = static_cast<int>(batch.size());
        batch.push_back(inputs[static_cast<std::size_t>(run)]);
        batch_finals.push_back(finals[static_cast<std::size_t>(run)]);
        touched.push_back(run);
      }
      return s;
    };
    for (int p = 0; p < config.pairs_per_step; ++p) {
      const auto& [i, j] = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pool.size())))];
      pairs.push_back(PairExample{slot(i), slot(j),
                                  pair_target(finals[static_cast<std::size_t>(i)],
                                              finals[static_cast<std::size_t>(j)])});
    }
    for (int run : touched) slot_of[static_cast<std::size_t>(run)] = -1;

    const int B = static_cast<int>(batch.size());
    std::vector<int> rec_runs(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) rec_runs[static_cast<std::size_t>(b)] = b;
    if (config.rec_samples_per_step < B) {
      for (int k = 0; k < config.rec_samples_per_step; ++k) {
        const auto swap_with = k + rng.uniform_int(B - k);
        std::swap(rec_runs[static_cast<std::size_t>(k)], rec_runs[static_cast<std::size_t>(swap_with)]);
      }
      rec_runs.resize(static_cast<std::size_t>(config.rec_samples_per_step));
    }

    for (Tensor* t : all_tensors) t->zero_grad();
    Graph g;
    LossParts loss = build_training_loss(g, params, batch, pairs, rec_runs, batch_finals);
    g.backward(loss.total);
    adam_step(all_tensors, adam);

    if (!params.all_finite())
      throw NumericError("training diverged: non-finite parameter after step " + std::to_string(step));
    if (metrics_out) {
      TrainingMetrics m;
      m.loss_ce = g.value(loss.ce).values[0];
      m.loss_rec = g.value(loss.rec).values[0];
      m.loss_perf = loss.perf.valid() ? g.value(loss.perf).values[0] : 0.0;
      m.loss_total = g.value(loss.total).values[0];
      metrics_out->push_back(m);
    }
  }
  return params;
}

double rank_pair_accuracy(RankerParams& params, const std::vector<RunRecord>& records, int l) {
  if (records.size() < 2) throw ValidationError("need at least two runs to measure pair accuracy");
  std::vector<EncodedInput> inputs;
  std::vector<double> finals;
  for (const RunRecord& r : records) {
    inputs.push_back(encode_input(r, l, params));
    finals.push_back(normalize(params.stats, r, r.epochs()).back());
  }
  const std::vector<double> scores = batch_score(inputs, params);
  std::int64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (i == j || records[i].dataset_id != records[j].dataset_id) continue;
      if (finals[i] == finals[j]) continue;
      ++total;
      const double p = pair_probability(scores[i], scores[j]);
      if ((finals[i] > finals[j]) == (p > 0.5)) ++correct;
    }
  if (total == 0) throw ValidationError("no strictly ordered same-dataset pair to measure");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double reconstruction_accuracy(RankerParams& params, const std::vector<RunRecord>& records) {
  const int V = static_cast<int>(params.vocabulary.size());
  std::int64_t hits = 0, total = 0;
  for (const RunRecord& r : records) {
    std::vector<int> tokens;
    for (const std::string& tok : r.arch_tokens) {
      const auto it = params.vocabulary.find(tok);
      if (it == params.vocabulary.end())
        throw ValidationError("unknown token \"" + tok + "\" in run " + r.run_id);
      tokens.push_back(it->second);
    }
    Graph g;
    ArchEncoding enc = encode_arch(g, tokens, params);
    const int T = static_cast<int>(tokens.size());
    Var enc_concat = enc.step_outputs.size() == 1 ? enc.step_outputs[0] : g.concat(enc.step_outputs, 0);
    Var enc_proj = g.matmul(enc_concat, g.leaf(params.attn_enc));
    LstmStepState state{enc.embedding, enc.final_cell};
    Var x = g.leaf(params.sos_embedding);
    for (int t = 0; t < T; ++t) {
      state = lstm_cell(g, x, state, params.decoder);
      Var dproj = g.matmul(state.h, g.leaf(params.attn_dec));
      Var escore = g.matmul(g.tanh(g.add_rows(enc_proj, dproj)), g.leaf(params.attn_v));
      Var weights = g.softmax(g.reshape(escore, {1, T}));
      Var context = g.matmul(weights, enc_concat);
      Var logits = g.add_rows(g.matmul(g.concat({state.h, context}, 1), g.leaf(params.out_proj_w)),
                              g.leaf(params.out_proj_b));
      const auto& lv = g.value(logits).values;
      int arg = 0;
      for (int v = 1; v < V; ++v)
        if (lv[static_cast<std::size_t>(v)] > lv[static_cast<std::size_t>(arg)]) arg = v;
      if (arg == tokens[static_cast<std::size_t>(t)]) ++hits;
      ++total;
      if (t + 1 < T) x = g.rows_lookup(g.leaf(params.arch_embedding), {tokens[static_cast<std::size_t>(t)]});
    }
  }
  if (total == 0) throw ValidationError("no tokens to reconstruct");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ojson config_to_json(const ModelConfig& c) {
  ojson j;
  j["curve_kernel_sizes"] = c.curve_kernel_sizes;
  j["filters_per_kernel"] = c.filters_per_kernel;
  j["arch_embed_dim"] = c.arch_embed_dim;
  j["arch_hidden_dim"] = c.arch_hidden_dim;
  j["dataset_embed_dim"] = c.dataset_embed_dim;
  j["combiner_hidden"] = c.combiner_hidden;
  j["alpha"] = c.alpha;
  j["perf_head_weight"] = c.perf_head_weight;
  j["curve_encoder_variant"] = curve_encoder_name(c.curve_encoder_variant);
  j["steps"] = c.steps;
  j["pairs_per_step"] = c.pairs_per_step;
  j["seed"] = c.seed;
  j["cross_dataset_pairs"] = c.cross_dataset_pairs;
  j["rec_samples_per_step"] = c.rec_samples_per_step;
  j["adam_learning_rate"] = c.adam_learning_rate;
  j["hparam_log_keys"] = c.hparam_log_keys;
  return j;
}

ModelConfig config_from_json(const ojson& j) {
  ModelConfig c;
  c.curve_kernel_sizes = j.at("curve_kernel_sizes").get<std::vector<int>>();
  c.filters_per_kernel = j.at("filters_per_kernel").get<int>();
  c.arch_embed_dim = j.at("arch_embed_dim").get<int>();
  c.arch_hidden_dim = j.at("arch_hidden_dim").get<int>();
  c.dataset_embed_dim = j.at("dataset_embed_dim").get<int>();
  c.combiner_hidden = j.at("combiner_hidden").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.perf_head_weight = j.at("perf_head_weight").get<double>();
  c.curve_encoder_variant = curve_encoder_from(j.at("curve_encoder_variant").get<std::string>());
  c.steps = j.at("steps").get<int>();
  c.pairs_per_step = j.at("pairs_per_step").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.cross_dataset_pairs = j.at("cross_dataset_pairs").get<bool>();
  c.rec_samples_per_step = j.at("rec_samples_per_step").get<int>();
  c.adam_learning_rate = j.at("adam_learning_rate").get<double>();
  c.hparam_log_keys = j.at("hparam_log_keys").get<std::vector<std::string>>();
  return c;
}

}  // namespace

void save_checkpoint(const RankerParams& params, const std::string& path) {
  ojson j;
  j["schema_version"] = 1;
  j["config"] = config_to_json(params.config);
  j["curve_length"] = params.curve_length;
  j["vocabulary"] = params.vocabulary;
  j["hparam_names"] = params.hparam_names;
  j["dataset_names"] = params.dataset_names;
  ojson st;
  for (const auto& [ds, s] : params.stats.per_dataset) {
    st[ds] = ojson{{"min_value", s.min_value},
                   {"max_value", s.max_value},
                   {"orientation", orientation_name(s.orientation)}};
  }
  j["stats"] = std::move(st);
  ojson tensors = ojson::array();
  for (const auto& [name, t] : const_cast<RankerParams&>(params).named_tensors()) {
    tensors.push_back(ojson{{"name", name}, {"shape", t->shape}, {"values", t->values}});
  }
  j["tensors"] = std::move(tensors);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
  if (!out.flush()) throw IoError("failed writing checkpoint " + path);
}

RankerParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  ojson j;
  try {
    in >> j;
  } catch (const ojson::exception& e) {
    throw ValidationError("malformed checkpoint " + path + ": " + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("unknown checkpoint schema_version in " + path);
    ModelConfig config = config_from_json(j.at("config"));
    NormalizationStats stats;
    for (const auto& [ds, s] : j.at("stats").items()) {
      DatasetStats d;
      d.min_value = s.at("min_value").get<double>();
      d.max_value = s.at("max_value").get<double>();
      d.orientation = orientation_from(s.at("orientation").get<std::string>());
      stats.per_dataset.emplace(ds, d);
    }
    RankerParams params = RankerParams::init(
        config, j.at("curve_length").get<int>(), j.at("vocabulary").get<std::map<std::string, int>>(),
        j.at("hparam_names").get<std::vector<std::string>>(),
        j.at("dataset_names").get<std::vector<std::string>>(), std::move(stats));
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : params.named_tensors()) by_name[name] = t;
    std::size_t restored = 0;
    for (const auto& entry : j.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError("checkpoint has unknown tensor \"" + name + "\"");
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != it->second->shape)
        throw ValidationError("checkpoint tensor \"" + name + "\" has shape " + shape_str(shape) +
                              ", expected " + shape_str(it->second->shape));
      it->second->values = entry.at("values").get<std::vector<double>>();
      ++restored;
    }
    if (restored != by_name.size())
      throw ValidationError("checkpoint is missing " + std::to_string(by_name.size() - restored) +
                            " tensors");
    return params;
  } catch (const ojson::exception& e) {
    throw ValidationError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace lcrank
