#pragma once

// Pairwise learning-curve ranking model. A run is scored from four encoded
// components (partial curve, architecture tokens, dataset embedding,
// hyperparameters); ordered pairs of scores train a logistic ranking loss
// with an attention-based architecture-reconstruction regularizer and an
// optional clamped final-performance head. One parameter set is trained per
// curve length l ("the f_l bank" lives in the termination module).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcrank/corpus.hpp"
#include "lcrank/tensor.hpp"

namespace lcrank {

enum class CurveEncoderVariant { conv_global_max, best_value_only };

std::string curve_encoder_name(CurveEncoderVariant v);
CurveEncoderVariant curve_encoder_from(const std::string& name);

struct ModelConfig {
  std::vector<int> curve_kernel_sizes{1, 2, 3, 4};
  int filters_per_kernel = 16;
  int arch_embed_dim = 16;
  int arch_hidden_dim = 32;
  int dataset_embed_dim = 8;
  int combiner_hidden = 64;
  double alpha = 0.8;             // weight of the ranking loss vs. reconstruction
  double perf_head_weight = 0.2;  // lambda; 0 disables the head's loss term
  CurveEncoderVariant curve_encoder_variant = CurveEncoderVariant::conv_global_max;
  int steps = 2000;
  int pairs_per_step = 256;
  std::uint64_t seed = 0;
  bool cross_dataset_pairs = false;  // default: pairs drawn within one dataset
  int rec_samples_per_step = 16;     // runs whose reconstruction loss enters a step
  double adam_learning_rate = 1e-3;
  // Hyperparameters entering the model as log10(value).
  std::vector<std::string> hparam_log_keys{"learning_rate", "batch_size"};

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainingMetrics {
  double loss_ce = 0.0;
  double loss_rec = 0.0;
  double loss_perf = 0.0;
  double loss_total = 0.0;
};

// A trained model for one curve length: configuration, input maps,
// normalization, and every parameter tensor. Self-contained checkpoint unit.
struct RankerParams {
  ModelConfig config;
  int curve_length = 0;
  std::map<std::string, int> vocabulary;
  std::vector<std::string> hparam_names;   // fixed component order
  std::vector<std::string> dataset_names;  // row index in the dataset table
  NormalizationStats stats;

  std::vector<Tensor> conv_kernels;  // [k x 1 x F] per configured kernel size
  std::vector<Tensor> conv_biases;   // [F]
  Tensor arch_embedding;             // [V x E]
  Tensor sos_embedding;              // [1 x E], decoder start-of-sequence input
  LstmParams encoder;                // E -> H
  LstmParams decoder;                // E -> H
  Tensor attn_enc;                   // [H x H]
  Tensor attn_dec;                   // [H x H]
  Tensor attn_v;                     // [H x 1]
  Tensor out_proj_w;                 // [2H x V]
  Tensor out_proj_b;                 // [1 x V]
  Tensor dataset_embedding;          // [D x dataset_embed_dim], grows per new id
  Tensor combiner_w;                 // [component width x combiner_hidden]
  Tensor combiner_b;                 // [1 x combiner_hidden]
  Tensor score_w;                    // [combiner_hidden x 1]
  Tensor score_b;                    // [1 x 1]
  Tensor perf_w;                     // [combiner_hidden x 1]
  Tensor perf_b;                     // [1 x 1]

  static RankerParams init(const ModelConfig& config, int curve_length,
                           std::map<std::string, int> vocabulary,
                           std::vector<std::string> hparam_names,
                           std::vector<std::string> dataset_names, NormalizationStats stats);

  int curve_feature_dim() const;
  int combiner_input_dim() const;
  std::vector<Tensor*> tensors();
  std::vector<std::pair<std::string, Tensor*>> named_tensors();

  int dataset_index(const std::string& id) const;  // -1 when unknown
  // Known id -> its row. Unknown id -> allocates one fresh seeded row
  // (transfer cold start) and registers the id.
  int ensure_dataset(const std::string& id);

  bool all_finite() const;
};

struct EncodedInput {
  std::vector<double> curve;    // normalized partial curve, length l
  std::vector<int> arch_tokens; // vocabulary indices
  int dataset_index = 0;
  std::vector<double> hparams;  // transformed values in hparam_names order
};

// Normalizes the first l epochs with params.stats (or the override, e.g.
// protocol-revealed statistics for a held-out dataset), maps tokens (error
// names token and run), transforms hyperparameters, and registers the
// dataset id.
EncodedInput encode_input(const RunRecord& record, int l, RankerParams& params,
                          const NormalizationStats* stats_override = nullptr);

struct ArchEncoding {
  Var embedding;                 // [1 x H] final hidden state
  Var final_cell;                // [1 x H], seeds the decoder state
  std::vector<Var> step_outputs; // one [1 x H] per token
};

// Curve component; constant-width output regardless of l (kernels longer
// than the curve contribute zero blocks; l = 0 is all zeros).
Var encode_curve(Graph& g, const std::vector<double>& curve, RankerParams& params);
ArchEncoding encode_arch(Graph& g, const std::vector<int>& tokens, RankerParams& params);
Var encode_dataset(Graph& g, int dataset_index, RankerParams& params);

double score(const EncodedInput& x, RankerParams& params);
std::vector<double> batch_score(const std::vector<EncodedInput>& xs, RankerParams& params);

// p_hat = sigma(f_i - f_j), numerically stable logistic.
double pair_probability(double f_i, double f_j);
// 1 / 0.5 / 0 from final performances in higher-better orientation.
double pair_target(double final_i, double final_j);
// Mean cross-entropy over (target, p_hat) pairs, p_hat clamped to
// [1e-12, 1 - 1e-12].
double loss_ce_value(const std::vector<std::pair<double, double>>& target_and_phat);

struct PairExample {
  int i = 0;  // indices into the batch inputs
  int j = 0;
  double target = 0.5;
};

// Attention decoder reconstruction loss for one run: teacher-forced LSTM over
// the true token sequence with additive attention on the encoder outputs;
// mean per-step softmax cross-entropy over the vocabulary.
Var loss_rec(Graph& g, const std::vector<int>& tokens, const ArchEncoding& enc, RankerParams& params);

struct BatchOutputs {
  Var scores;    // [B x 1]
  Var perf_raw;  // [B x 1]
};

// Shared forward pass over a batch of encoded inputs (all with the same
// curve length). Architecture sequences are grouped by length so the LSTM
// runs batched.
BatchOutputs build_batch(Graph& g, const std::vector<EncodedInput>& xs, RankerParams& params);

struct LossParts {
  Var total;
  Var ce;
  Var rec;
  Var perf;  // invalid Var when the head is disabled
};

LossParts build_training_loss(Graph& g, RankerParams& params, const std::vector<EncodedInput>& xs,
                              const std::vector<PairExample>& pairs, const std::vector<int>& rec_runs,
                              const std::vector<double>& final_targets);

// Raw final-performance head output clamped to [best observed partial value,
// mean of previously completed finals]; floor wins a conflict; no context ->
// raw output.
double predict_final(const EncodedInput& x, RankerParams& params,
                     const std::vector<double>& completed_finals,
                     std::optional<double> best_observed);

RankerParams train_fl(const std::vector<RunRecord>& train_records, int l, const ModelConfig& config,
                      const NormalizationStats* stats_override = nullptr,
                      const std::map<std::string, int>* vocab_override = nullptr,
                      std::vector<TrainingMetrics>* metrics_out = nullptr);

// Fraction of strictly ordered same-dataset pairs whose predicted
// probability lands on the correct side of 0.5.
double rank_pair_accuracy(RankerParams& params, const std::vector<RunRecord>& records, int l);

// Fraction of decoder argmax tokens matching the true sequences.
double reconstruction_accuracy(RankerParams& params, const std::vector<RunRecord>& records);

void save_checkpoint(const RankerParams& params, const std::string& path);
RankerParams load_checkpoint(const std::string& path);

}  // namespace lcrank
