#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "mdc/corpus.hpp"
#include "mdc/curriculum.hpp"
#include "mdc/error.hpp"
#include "mdc/experiment.hpp"
#include "mdc/features.hpp"
#include "mdc/gp.hpp"
#include "mdc/synthetic.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mdc;

namespace {

TrainMode parse_mode(const std::string& mode) {
  if (mode == "curriculum") return TrainMode::kCurriculum;
  if (mode == "none") return TrainMode::kNoCurriculum;
  if (mode == "loss-weighted") return TrainMode::kLossWeighted;
  throw UsageError("mode must be curriculum, none or loss-weighted");
}

}  // namespace

PYBIND11_MODULE(_mdcurriculum, m) {
  m.doc() = "Multi-domain curriculum learning on a toy translation model";

  // Translators run newest first, so the subclasses go after the base.
  auto& base = py::register_exception<Error>(m, "Error");
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<Schedule>(m, "Schedule")
      .def(py::init([](double halving, double floor, std::int64_t warmup, std::int64_t max_steps) {
             Schedule s{halving, floor, warmup, max_steps};
             s.validate();
             return s;
           }),
           py::arg("halving") = 1000.0, py::arg("floor") = 0.2, py::arg("warmup") = 0,
           py::arg("max_steps") = 2000)
      .def_static("plateau_after", &Schedule::plateau_after, py::arg("decay_steps"),
                  py::arg("floor"), py::arg("warmup"), py::arg("max_steps"))
      .def_static("constant", &Schedule::constant, py::arg("max_steps"))
      .def_readwrite("halving", &Schedule::halving)
      .def_readwrite("floor", &Schedule::floor)
      .def_readwrite("warmup", &Schedule::warmup)
      .def_readwrite("max_steps", &Schedule::max_steps)
      .def("rho", [](const Schedule& s, std::int64_t t) { return rho(s, t); }, py::arg("t"))
      .def("__repr__", [](const Schedule& s) {
        return "Schedule(halving=" + std::to_string(s.halving) + ", floor=" +
               std::to_string(s.floor) + ", warmup=" + std::to_string(s.warmup) +
               ", max_steps=" + std::to_string(s.max_steps) + ")";
      });

  m.def("selected_count", &selected_count, py::arg("rho"), py::arg("n"));
  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("percentiles", [](const std::vector<double>& f) {
    std::vector<SentencePair> pairs;
    for (std::size_t i = 0; i < f.size(); ++i)
      pairs.push_back({static_cast<std::int64_t>(i), {"x"}, {"y"}});
    ScoredCorpus c(std::move(pairs));
    c.set_scores(f);
    percentile_normalize(c);
    return c.percentiles();
  }, py::arg("scores"), "Percentiles k/n by ascending (score, position).");
  m.def("embedding_similarity", [](const std::string& source, const std::string& target,
                                   std::size_t buckets) {
    return embedding_similarity_feature({0, tokenize(source), tokenize(target)}, buckets);
  }, py::arg("source"), py::arg("target"), py::arg("buckets") = kDefaultBuckets);
  m.def("expected_improvement",
        py::overload_cast<double, double, double>(&expected_improvement), py::arg("mu"),
        py::arg("sigma"), py::arg("best"));

  m.def("write_synthetic", [](const fs::path& dir, std::size_t pairs, double noise,
                              std::uint64_t seed) {
    SyntheticConfig sc;
    sc.pairs = pairs;
    sc.noise_ratio = noise;
    sc.seed = seed;
    const auto syn = generate_synthetic(sc);
    fs::create_directories(dir);
    write_synthetic(syn, dir);
    const auto path = dir / "config.json";
    std::ofstream(path, std::ios::binary) << serialize_config(synthetic_experiment(syn.domains, seed));
    return path;
  }, py::arg("dir"), py::arg("pairs") = 20000, py::arg("noise") = 0.3, py::arg("seed") = 1,
     "Writes a generated corpus and its config.json; returns the config path.");

  m.def("validate_config", [](const fs::path& path) {
    return serialize_config(load_config(path));
  }, py::arg("config"), "Loads, validates and re-serializes a config.");
  m.def("score", [](const fs::path& path) { cmd_score(load_config(path)); }, py::arg("config"));
  m.def("normalize", [](const fs::path& path, const std::string& weights) {
    cmd_normalize(load_config(path), weights);
  }, py::arg("config"), py::arg("weights") = "uniform");
  m.def("tune", [](const fs::path& path, const std::string& method, bool resume) {
    auto c = load_config(path);
    if (!method.empty()) c.tuning.method = method;
    c.validate(true);
    cmd_tune(c, resume);
  }, py::arg("config"), py::arg("method") = "", py::arg("resume") = false);
  m.def("train", [](const fs::path& path, const std::string& run, const std::string& weights,
                    const std::string& mode, std::vector<std::string> finetune,
                    std::optional<std::uint64_t> seed) {
    TrainOptions opt;
    opt.mode = parse_mode(mode);
    opt.finetune = std::move(finetune);
    opt.seed = seed;
    cmd_train(load_config(path), run, weights, opt);
  }, py::arg("config"), py::arg("run"), py::arg("weights") = "", py::arg("mode") = "curriculum",
     py::arg("finetune") = std::vector<std::string>{}, py::arg("seed") = py::none());
  m.def("evaluate", [](const fs::path& path, const fs::path& model, const fs::path& out) {
    cmd_eval(load_config(path), model, out);
  }, py::arg("config"), py::arg("model"), py::arg("out") = fs::path{});
  m.def("report", [](const fs::path& path, const std::string& weights) {
    return cmd_report(load_config(path), weights);
  }, py::arg("config"), py::arg("weights") = "", "Returns the names of absent runs.");
}
