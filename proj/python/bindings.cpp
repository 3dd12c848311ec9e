#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "lcrank/corpus.hpp"
#include "lcrank/ranker.hpp"
#include "lcrank/report.hpp"
#include "lcrank/search_sim.hpp"
#include "lcrank/termination.hpp"

namespace py = pybind11;
using namespace lcrank;

namespace {

Corpus make_corpus(std::vector<RunRecord> records) {
  Corpus corpus;
  corpus.records = std::move(records);
  corpus.vocabulary = build_vocabulary(corpus.records);
  corpus.dataset_ids = collect_dataset_ids(corpus.records);
  validate_corpus(corpus);
  return corpus;
}

int resolve_length(const RankerParams& params, int l) {
  return l < 0 ? params.curve_length : l;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pairwise learning-curve ranking: corpora, models, termination policies, protocols";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_IOError, e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(PyExc_ArithmeticError, e.what());
    }
  });

  py::class_<RunRecord>(m, "RunRecord")
      .def(py::init<>())
      .def_readwrite("dataset_id", &RunRecord::dataset_id)
      .def_readwrite("run_id", &RunRecord::run_id)
      .def_readwrite("arch_tokens", &RunRecord::arch_tokens)
      .def_readwrite("hparams", &RunRecord::hparams)
      .def_readwrite("curve", &RunRecord::curve)
      .def_property(
          "metric_orientation",
          [](const RunRecord& r) { return orientation_name(r.metric_orientation); },
          [](RunRecord& r, const std::string& name) { r.metric_orientation = orientation_from(name); })
      .def("epochs", &RunRecord::epochs)
      .def("__repr__", [](const RunRecord& r) {
        return "RunRecord(" + r.dataset_id + "/" + r.run_id + ", " +
               std::to_string(r.epochs()) + " epochs)";
      });

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("records", &Corpus::records)
      .def_readonly("dataset_ids", &Corpus::dataset_ids)
      .def_readonly("vocabulary", &Corpus::vocabulary)
      .def("__len__", [](const Corpus& c) { return c.records.size(); });

  m.def("make_corpus", &make_corpus, py::arg("records"),
        "Build a validated corpus (vocabulary, dataset ids) from records");
  m.def("load_jsonl", &load_jsonl, py::arg("path"));
  m.def("save_jsonl", &save_jsonl, py::arg("corpus"), py::arg("path"));
  m.def(
      "synth_generate",
      [](int datasets, int runs, int epochs, double noise_sd, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.n_datasets = datasets;
        spec.runs_per_dataset = runs;
        spec.epochs = epochs;
        spec.noise_sd = noise_sd;
        spec.seed = seed;
        return synth_generate(spec);
      },
      py::arg("datasets") = 5, py::arg("runs") = 100, py::arg("epochs") = 100,
      py::arg("noise_sd") = 0.0, py::arg("seed") = 0,
      "Seeded power-law corpus whose finals depend on architecture and hyperparameters");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const py::kwargs& kwargs) {
        ModelConfig c;
        py::object view = py::cast(&c, py::return_value_policy::reference);
        for (auto item : kwargs) py::setattr(view, item.first, item.second);
        return c;
      }))
      .def_readwrite("filters_per_kernel", &ModelConfig::filters_per_kernel)
      .def_readwrite("arch_embed_dim", &ModelConfig::arch_embed_dim)
      .def_readwrite("arch_hidden_dim", &ModelConfig::arch_hidden_dim)
      .def_readwrite("dataset_embed_dim", &ModelConfig::dataset_embed_dim)
      .def_readwrite("combiner_hidden", &ModelConfig::combiner_hidden)
      .def_readwrite("alpha", &ModelConfig::alpha)
      .def_readwrite("perf_head_weight", &ModelConfig::perf_head_weight)
      .def_readwrite("steps", &ModelConfig::steps)
      .def_readwrite("pairs_per_step", &ModelConfig::pairs_per_step)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_readwrite("cross_dataset_pairs", &ModelConfig::cross_dataset_pairs)
      .def_readwrite("rec_samples_per_step", &ModelConfig::rec_samples_per_step)
      .def_readwrite("adam_learning_rate", &ModelConfig::adam_learning_rate)
      .def_property(
          "curve_encoder",
          [](const ModelConfig& c) { return curve_encoder_name(c.curve_encoder_variant); },
          [](ModelConfig& c, const std::string& name) {
            c.curve_encoder_variant = curve_encoder_from(name);
          })
      .def("validate", &ModelConfig::validate);

  py::class_<RankerParams>(m, "RankerParams")
      .def_readonly("curve_length", &RankerParams::curve_length)
      .def_readonly("dataset_names", &RankerParams::dataset_names)
      .def_property_readonly("config", [](const RankerParams& p) { return p.config; })
      .def(
          "score",
          [](RankerParams& p, const RunRecord& r, int l) {
            return score(encode_input(r, resolve_length(p, l), p), p);
          },
          py::arg("record"), py::arg("l") = -1)
      .def(
          "score_many",
          [](RankerParams& p, const std::vector<RunRecord>& records, int l) {
            std::vector<EncodedInput> xs;
            xs.reserve(records.size());
            for (const RunRecord& r : records) xs.push_back(encode_input(r, resolve_length(p, l), p));
            return batch_score(xs, p);
          },
          py::arg("records"), py::arg("l") = -1)
      .def(
          "predict_final",
          [](RankerParams& p, const RunRecord& r, const std::vector<double>& completed_finals,
             std::optional<double> best_observed, int l) {
            return predict_final(encode_input(r, resolve_length(p, l), p), p, completed_finals,
                                 best_observed);
          },
          py::arg("record"), py::arg("completed_finals") = std::vector<double>{},
          py::arg("best_observed") = std::nullopt, py::arg("l") = -1)
      .def("rank_pair_accuracy", &rank_pair_accuracy, py::arg("records"), py::arg("l"))
      .def("reconstruction_accuracy", &reconstruction_accuracy, py::arg("records"));

  m.def(
      "train",
      [](const std::vector<RunRecord>& records, int l, const ModelConfig& config) {
        return train_fl(records, l, config);
      },
      py::arg("records"), py::arg("l"), py::arg("config"),
      "Train the length-l ranking model on the given records");
  m.def("save_checkpoint", &save_checkpoint, py::arg("params"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def("pair_probability", &pair_probability, py::arg("f_i"), py::arg("f_j"));
  m.def("pair_target", &pair_target, py::arg("final_i"), py::arg("final_j"));
  m.def("spearman", &spearman, py::arg("a"), py::arg("b"));

  py::class_<TerminationPolicy>(m, "TerminationPolicy")
      .def_static("none", &TerminationPolicy::none)
      .def_static("lcranknet", &TerminationPolicy::lcranknet, py::arg("delta"),
                  py::arg("cadence") = 3)
      .def_static("last_value", &TerminationPolicy::last_value, py::arg("cadence") = 3)
      .def_static("successive_halving", &TerminationPolicy::successive_halving,
                  py::arg("initial_runs"), py::arg("interval"))
      .def_static("hyperband", &TerminationPolicy::hyperband, py::arg("max_resource"),
                  py::arg("eta"))
      .def_readwrite("delta", &TerminationPolicy::delta)
      .def_readwrite("cadence", &TerminationPolicy::cadence)
      .def_property_readonly("name", &TerminationPolicy::name);

  py::class_<ModelBank>(m, "ModelBank")
      .def(py::init<std::vector<RunRecord>, ModelConfig>(), py::arg("records"), py::arg("config"))
      .def_static("from_directory", &ModelBank::from_directory, py::arg("dir"))
      .def("contains", &ModelBank::contains, py::arg("l"));

  py::class_<TraceEntry>(m, "TraceEntry")
      .def_readonly("epoch", &TraceEntry::epoch)
      .def_readonly("p", &TraceEntry::p)
      .def_readonly("max_branch", &TraceEntry::max_branch)
      .def_readonly("stopped", &TraceEntry::stopped);

  py::class_<ReplayDecision>(m, "ReplayDecision")
      .def_readonly("run_id", &ReplayDecision::run_id)
      .def_readonly("stop_epoch", &ReplayDecision::stop_epoch)
      .def_readonly("stopped_early", &ReplayDecision::stopped_early)
      .def_readonly("trace", &ReplayDecision::trace);

  py::class_<ReplayResult>(m, "ReplayResult")
      .def_readonly("policy", &ReplayResult::policy)
      .def_readonly("dataset", &ReplayResult::dataset)
      .def_readonly("order_seed", &ReplayResult::order_seed)
      .def_readonly("chosen_run_id", &ReplayResult::chosen_run_id)
      .def_readonly("chosen_final", &ReplayResult::chosen_final)
      .def_readonly("best_final", &ReplayResult::best_final)
      .def_readonly("regret", &ReplayResult::regret)
      .def_readonly("epochs_consumed", &ReplayResult::epochs_consumed)
      .def_readonly("decisions", &ReplayResult::decisions);

  m.def("random_search_replay", &random_search_replay, py::arg("corpus"), py::arg("held_out"),
        py::arg("policy"), py::arg("order_seed"), py::arg("bank") = nullptr,
        py::arg("max_runs") = 0,
        "Replay the held-out runs in a seeded order under a termination policy");

  py::class_<RankingEvalResult>(m, "RankingEvalResult")
      .def_readonly("dataset", &RankingEvalResult::dataset)
      .def_readonly("scorer", &RankingEvalResult::scorer)
      .def_readonly("fractions", &RankingEvalResult::fractions)
      .def_readonly("per_rep", &RankingEvalResult::per_rep)
      .def_readonly("mean_correlation", &RankingEvalResult::mean_correlation)
      .def_readonly("sd_correlation", &RankingEvalResult::sd_correlation);

  m.def(
      "ranking_experiment",
      [](const Corpus& corpus, const std::string& held_out, const std::string& scorer,
         const ModelConfig& config, int repetitions, std::uint64_t seed,
         std::vector<double> fractions, int n_test, int n_train) {
        return ranking_experiment(corpus, held_out, ranking_scorer_from(scorer), config,
                                  repetitions, seed, std::move(fractions), n_test, n_train);
      },
      py::arg("corpus"), py::arg("held_out"), py::arg("scorer"), py::arg("config"),
      py::arg("repetitions"), py::arg("seed"), py::arg("fractions"), py::arg("n_test") = 50,
      py::arg("n_train") = 5,
      "Spearman correlation of predicted vs. true rankings at each curve-length fraction");

  py::class_<EvolutionConfig>(m, "EvolutionConfig")
      .def(py::init([](int population, int tournament, int budget, std::uint64_t seed) {
             EvolutionConfig c;
             c.population = population;
             c.tournament = tournament;
             c.budget = budget;
             c.seed = seed;
             return c;
           }),
           py::arg("population") = 10, py::arg("tournament") = 3, py::arg("budget") = 100,
           py::arg("seed") = 0)
      .def_readwrite("population", &EvolutionConfig::population)
      .def_readwrite("tournament", &EvolutionConfig::tournament)
      .def_readwrite("budget", &EvolutionConfig::budget)
      .def_readwrite("seed", &EvolutionConfig::seed);

  py::class_<EvolutionResult>(m, "EvolutionResult")
      .def_readonly("best_run_id", &EvolutionResult::best_run_id)
      .def_readonly("best_objective", &EvolutionResult::best_objective)
      .def_readonly("epochs_consumed", &EvolutionResult::epochs_consumed)
      .def_readonly("evaluations", &EvolutionResult::evaluations)
      .def_readonly("incumbent_trace", &EvolutionResult::incumbent_trace);

  m.def("regularized_evolution", &regularized_evolution, py::arg("corpus"), py::arg("dataset"),
        py::arg("policy"), py::arg("config"), py::arg("bank") = nullptr,
        "Aging evolution over one dataset's stored runs");

  py::class_<ResultRow>(m, "ResultRow")
      .def(py::init<>())
      .def_readwrite("protocol", &ResultRow::protocol)
      .def_readwrite("dataset", &ResultRow::dataset)
      .def_readwrite("policy", &ResultRow::policy)
      .def_readwrite("seed", &ResultRow::seed)
      .def_readwrite("length_fraction", &ResultRow::length_fraction)
      .def_readwrite("spearman_value", &ResultRow::spearman_value)
      .def_readwrite("regret", &ResultRow::regret)
      .def_readwrite("epochs", &ResultRow::epochs);

  m.def("ranking_result_rows", &ranking_result_rows, py::arg("result"));
  m.def("replay_result_row", &replay_result_row, py::arg("result"));
  m.def("results_csv", &results_csv, py::arg("rows"));
  m.def("parse_results_csv", &parse_results_csv, py::arg("text"));
  m.def("ranking_chart_svg", &ranking_chart_svg, py::arg("rows"));
  m.def("replay_chart_svg", &replay_chart_svg, py::arg("rows"));
}
