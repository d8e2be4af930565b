// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// ltto: command-line harness. Every subcommand writes its resolved config and
// a manifest of SHA-256 digests next to its outputs, so two runs with the same
// config and seed can be compared byte for byte.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ltto/analysis.hpp"
#include "ltto/experiments.hpp"
#include "ltto/io.hpp"
#include "ltto/model.hpp"
#include "ltto/seed.hpp"
#include "ltto/theory.hpp"
#include "ltto/tto.hpp"
#include "ltto/world.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace ltto;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wraps library validation so the message names the offending field.
template <class F>
auto checked(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const NumericalError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(field + ": " + e.what());
  }
}

// Config fields shared between CLI flags and the JSON document. A flag given
// on the command line wins over the same key in --config.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {}

  template <class T>
  void add(const std::string& key, T& var, const std::string& help) {
    CLI::Option* opt = app_->add_option(flag_of(key), var, help);
    if constexpr (is_vector<T>::value) opt->delimiter(',');
    fields_.push_back({key, opt, [&var](const json& j) { var = j.get<T>(); },
                       [&var] { return json(var); }});
  }

  void flag(const std::string& key, bool& var, const std::string& help) {
    CLI::Option* opt = app_->add_flag(flag_of(key), var, help);
    fields_.push_back({key, opt, [&var](const json& j) { var = j.get<bool>(); },
                       [&var] { return json(var); }});
  }

  void resolve(const std::string& config_path) {
    if (config_path.empty()) return;
    std::ifstream in(config_path);
    if (!in) throw UsageError("config: cannot open " + config_path);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw UsageError("config: top level must be an object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "command") continue;
      auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
      if (it == fields_.end()) throw UsageError("config: unknown key '" + key + "'");
      if (it->opt->count() > 0) continue;
      try {
        it->load(value);
      } catch (const json::exception& e) {
        throw UsageError("config: " + key + ": " + e.what());
      }
    }
  }

  json resolved(const std::string& command) const {
    json j;
    j["command"] = command;
    for (const auto& f : fields_) j[f.key] = f.dump();
    return j;
  }

 private:
  template <class T>
  struct is_vector : std::false_type {};
  template <class T>
  struct is_vector<std::vector<T>> : std::true_type {};

  struct Field {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> load;
    std::function<json()> dump;
  };

  static std::string flag_of(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return "--" + key;
  }

  CLI::App* app_;
  std::vector<Field> fields_;
};

struct Common {
  std::uint64_t seed = 1;
  std::string out;
  std::string config;
  bool timing = false;
};

struct SceneParams {
  std::string kind = "mixed";
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t points = 100;
  double sensor_scale = 1.25;
  double sensor_shift = 0.4;
  double noise = 0.01;

  void add_to(Params& p) {
    p.add("kind", kind, "scene kind: planes, spheres, steps, mixed");
    p.add("height", height, "image height");
    p.add("width", width, "image width");
    p.add("points", points, "sparse measurements per scene");
    p.add("sensor_scale", sensor_scale, "sensor scale a*");
    p.add("sensor_shift", sensor_shift, "sensor shift b* (metres)");
    p.add("noise", noise, "sensor noise sigma (metres)");
  }

  world::SensorModel sensor() const { return {sensor_scale, sensor_shift, noise}; }

  experiments::TestSetConfig test_set(std::size_t scenes, std::uint64_t seed) const {
    experiments::TestSetConfig c;
    c.scenes = scenes;
    c.height = height;
    c.width = width;
    c.points = points;
    c.sensor = sensor();
    c.seed = seed;
    return c;
  }
};

struct AdaptParams {
  std::string scope = "decoder_lora";
  std::size_t iters = 40;
  double lr = 0.01;
  std::size_t rank = 8;
  double momentum = 0.0;
  bool detach_alignment = false;
  bool unnormalized = false;
  bool no_cache = false;
  std::string projection = "none";
  std::size_t projection_layer = 1;
  std::vector<std::size_t> decoder_layers;

  void add_to(Params& p) {
    p.add("scope", scope, "decoder_lora, encoder_lora, full_lora, decoder_ft, encoder_ft, full_ft");
    p.add("iters", iters, "TTO iterations T (0: zero-shot baseline)");
    p.add("lr", lr, "learning rate");
    p.add("rank", rank, "LoRA rank");
    p.add("momentum", momentum, "heavy-ball momentum (0: plain gradient descent)");
    p.flag("detach_alignment", detach_alignment, "treat a, b as constants in the backward pass");
    p.flag("unnormalized", unnormalized, "sum the sparse loss instead of averaging");
    p.flag("no_cache", no_cache, "re-encode at every iteration");
    p.add("projection", projection, "feature projection: none, top_k, orth_k, rand_k");
    p.add("projection_layer", projection_layer, "decoder layer whose input is projected");
    p.add("decoder_layers", decoder_layers, "restrict decoder scopes to these layers");
  }

  tto::AdaptConfig config(std::uint64_t seed) const {
    tto::AdaptConfig c;
    c.scope = checked("scope", [&] { return tto::parse_scope(scope); });
    c.iterations = iters;
    c.learning_rate = lr;
    c.rank = rank;
    c.momentum = momentum;
    c.detach_alignment = detach_alignment;
    c.unnormalized = unnormalized;
    c.cache_features = !no_cache;
    c.seed = seed;
    if (!decoder_layers.empty()) c.decoder_layers = decoder_layers;
    auto spec = checked("projection", [&] { return analysis::parse_projection(projection); });
    if (spec.mode != analysis::ProjectionSpec::Mode::none) {
      spec.layer = projection_layer;
      spec.seed = seed;
      c.projection = spec;
    }
    if (iters > 0) checked("adapt", [&] { c.validate(); return 0; });
    return c;
  }
};

std::string fmt(double v) { return io::format_double(v); }

std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const Common& c) {
  if (c.out.empty()) throw UsageError("out: an output directory is required");
  fs::create_directories(c.out);
  return fs::path(c.out);
}

void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    list.push_back({{"path", fs::relative(f, dir).generic_string()},
                    {"bytes", fs::file_size(f)},
                    {"sha256", io::sha256_file(f)}});
  }
  write_json(dir / "manifest.json", {{"files", list}});
}

model::FoundationModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("model: a pretrained model file is required");
  try {
    return model::FoundationModel::load(path);
  } catch (const std::exception& e) {
    throw UsageError("model: " + std::string(e.what()));
  }
}

json metrics_json(const tto::AdaptResult& r) {
  json j;
  if (r.metrics) {
    j["mae"] = r.metrics->mae;
    j["rmse"] = r.metrics->rmse;
  }
  j["a"] = r.scale_shift.a;
  j["b"] = r.scale_shift.b;
  j["fallback"] = r.fallback;
  j["iterations"] = r.trace.iterations.size();
  j["encoder_calls"] = r.trace.encoder_calls;
  return j;
}

// ---- generate ---------------------------------------------------------------

struct GenerateCmd {
  SceneParams scene;
  std::size_t count = 1;

  void add_to(Params& p) {
    scene.add_to(p);
    p.add("count", count, "number of scenes");
  }

  void run(const Common& c, const fs::path& out) const {
    const auto kind = checked("kind", [&] { return world::parse_scene_kind(scene.kind); });
    if (count < 1) throw UsageError("count: must be at least 1");
    for (std::size_t i = 0; i < count; ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "scene_%03zu", i);
      const auto s = checked("height", [&] {
        return world::generate_scene(kind, scene.height, scene.width, mix_seed(c.seed, 2 * i));
      });
      const auto obs = checked("points", [&] {
        return world::sample_sparse(s, scene.points, scene.sensor_scale, scene.sensor_shift,
                                    scene.noise, mix_seed(c.seed, 2 * i + 1));
      });
      io::write_tensor_file(out / (std::string(stem) + ".ltto"), io::scene_bundle(s, obs));
      io::write_pfm(out / (std::string(stem) + "_depth.pfm"), s.depth);
      io::write_pfm(out / (std::string(stem) + "_image.pfm"), s.image);
      io::write_observations_csv(out / (std::string(stem) + "_obs.csv"), obs);
      write_json(out / (std::string(stem) + ".json"),
                 {{"kind", std::string(world::to_string(s.kind))},
                  {"scene_seed", s.seed},
                  {"observation_seed", obs.seed},
                  {"height", s.height()},
                  {"width", s.width()},
                  {"points", obs.size()},
                  {"sensor_scale", obs.sensor_scale},
                  {"sensor_shift", obs.sensor_shift},
                  {"noise_sigma", obs.noise_sigma}});
    }
  }
};

// ---- pretrain ---------------------------------------------------------------

struct PretrainCmd {
  std::size_t population = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t epochs = 15;
  double lr = 3e-3;
  std::size_t batch = 4;
  double stage_rms = 0.3;
  std::size_t patch = 4;
  std::uint64_t init_seed = 7;

  void add_to(Params& p) {
    p.add("population", population, "training scenes (a tenth held out)");
    p.add("height", height, "image height");
    p.add("width", width, "image width");
    p.add("epochs", epochs, "training epochs");
    p.add("lr", lr, "Adam learning rate");
    p.add("batch", batch, "scenes per Adam step");
    p.add("stage_rms", stage_rms, "decoder stage scale after rebalancing (0: off)");
    p.add("patch", patch, "encoder patch size");
    p.add("init_seed", init_seed, "weight initialisation seed");
  }

  void run(const Common& c, const fs::path& out) const {
    if (population < 2) throw UsageError("population: need at least two scenes");
    model::PretrainConfig pc;
    pc.epochs = epochs;
    pc.learning_rate = lr;
    pc.batch_size = batch;
    pc.stage_rms = stage_rms;
    pc.model.patch_size = patch;
    pc.seed = init_seed;
    const auto pop = checked("height", [&] { return world::make_population(population, height, width, c.seed); });
    const auto trained = checked("pretrain", [&] { return model::pretrain(pop, pc); });
    trained.model.save(out / "model.ltto");
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < trained.report.epoch_loss.size(); ++e)
      csv += csv_row({std::to_string(e), fmt(trained.report.epoch_loss[e])});
    io::write_text(out / "pretrain_loss.csv", csv);
    write_json(out / "pretrain.json",
               {{"train_scenes", trained.report.train_scenes},
                {"validation_scenes", trained.report.validation_scenes},
                {"validation_aligned_rmse", trained.report.validation_aligned_rmse},
                {"validation_median_rmse", trained.report.validation_median_rmse},
                {"encoder_digest", trained.model.digest(model::Part::encoder)},
                {"decoder_digest", trained.model.digest(model::Part::decoder)}});
  }
};

// ---- adapt ------------------------------------------------------------------

struct AdaptCmd {
  std::string model_path;
  std::string scene_file;
  SceneParams scene;
  AdaptParams adapt;
  std::vector<std::size_t> sweep_sparsity;

  void add_to(Params& p) {
    p.add("model", model_path, "pretrained model (.ltto)");
    p.add("scene", scene_file, "scene bundle from generate (.ltto); otherwise one is generated");
    scene.add_to(p);
    adapt.add_to(p);
    p.add("sweep_sparsity", sweep_sparsity, "point counts; one metrics row per density");
  }

  std::pair<world::SceneSample, world::SparseObservation> load_scene(std::uint64_t seed) const {
    if (!scene_file.empty()) {
      try {
        return io::read_scene_bundle(io::read_tensor_file(scene_file));
      } catch (const std::exception& e) {
        throw UsageError("scene: " + std::string(e.what()));
      }
    }
    const auto kind = checked("kind", [&] { return world::parse_scene_kind(scene.kind); });
    auto s = checked("height", [&] { return world::generate_scene(kind, scene.height, scene.width, mix_seed(seed, 0)); });
    auto obs = checked("points", [&] {
      return world::sample_sparse(s, scene.points, scene.sensor_scale, scene.sensor_shift, scene.noise,
                                  mix_seed(seed, 1));
    });
    return {std::move(s), std::move(obs)};
  }

  void run(const Common& c, const fs::path& out, json& timing) const {
    const auto m = load_model(model_path);
    const auto cfg = adapt.config(c.seed);
    const auto [s, obs] = load_scene(c.seed);

    const auto t0 = std::chrono::steady_clock::now();
    const auto base = checked("scene", [&] { return tto::zero_shot_baseline(m, s, obs); });
    const auto r = adapt.iters == 0 ? base : checked("scene", [&] { return tto::adapt(m, s, obs, cfg); });
    timing["adapt_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Tensor truth = world::sensor_frame_depth(s, obs);
    Tensor err = r.aligned.detached();
    for (std::size_t i = 0; i < err.numel(); ++i) err[i] = std::abs(err[i] - truth[i]);
    io::write_pfm(out / "aligned.pfm", r.aligned);
    io::write_pfm(out / "depth.pfm", r.depth);
    io::write_pfm(out / "error.pfm", err);

    std::string csv = "t,loss,a,b,fallback,flops\n";
    for (const auto& it : r.trace.iterations)
      csv += csv_row({std::to_string(it.t), fmt(it.loss), fmt(it.a), fmt(it.b), it.fallback ? "1" : "0",
                      std::to_string(it.flops)});
    io::write_text(out / "trace.csv", csv);

    io::NamedTensors deltas;
    for (const auto& [name, d] : r.deltas) deltas.emplace_back(name, d.to_tensor());
    io::write_tensor_file(out / "deltas.ltto", deltas);

    json metrics = metrics_json(r);
    metrics["baseline"] = metrics_json(base);
    metrics["initial_loss"] = tto::sparse_loss(base.aligned, obs, adapt.unnormalized);
    metrics["final_loss"] = tto::sparse_loss(r.aligned, obs, adapt.unnormalized);
    write_json(out / "metrics.json", metrics);

    if (!sweep_sparsity.empty()) {
      tto::AdaptConfig sweep_cfg = cfg;
      if (adapt.iters == 0) throw UsageError("sweep_sparsity: needs iters > 0");
      const auto rows = checked("sweep_sparsity", [&] {
        return experiments::sparsity_sweep(m, s, sweep_sparsity, scene.sensor(), mix_seed(c.seed, 2), sweep_cfg);
      });
      std::string sc = "points,baseline_mae,baseline_rmse,adapted_mae,adapted_rmse\n";
      for (const auto& row : rows)
        sc += csv_row({std::to_string(row.points), fmt(row.baseline_mae), fmt(row.baseline_rmse),
                       fmt(row.adapted_mae), fmt(row.adapted_rmse)});
      io::write_text(out / "sparsity.csv", sc);
    }
  }
};

// ---- analyze ----------------------------------------------------------------

struct AnalyzeCmd {
  std::string model_path;
  std::string trace_dir;
  SceneParams scene;
  AdaptParams adapt;
  std::size_t scenes = 20;
  std::vector<std::string> sections = {"correlation", "pc1", "energy", "projection", "rank", "alignment"};
  std::vector<std::size_t> ranks = {2, 4, 8, 16, 32};
  std::vector<std::string> projections = experiments::kProjectionLabels;
  bool population_basis = false;
  std::size_t energy_iters = 200;
  std::size_t confined_rank = 4;
  std::size_t k = 8;

  void add_to(Params& p) {
    p.add("model", model_path, "pretrained model (.ltto)");
    p.add("trace", trace_dir, "output directory of an adapt run");
    scene.add_to(p);
    adapt.add_to(p);
    p.add("scenes", scenes, "test scenes");
    p.add("sections", sections, "correlation, pc1, energy, projection, rank, alignment");
    p.add("ranks", ranks, "LoRA ranks for the rank sweep");
    p.add("projections", projections, "projection settings for the ablation");
    p.flag("population_basis", population_basis, "projection basis from the pooled test set");
    p.add("energy_iters", energy_iters, "steps per single-layer fine-tune");
    p.add("confined_rank", confined_rank, "feature subspace rank for the confined fine-tune");
    p.add("k", k, "subspace size for covariance/update alignment");
  }

  bool wants(const std::string& s) const {
    return std::find(sections.begin(), sections.end(), s) != sections.end();
  }

  void run(const Common& c, const fs::path& out) const {
    static const std::vector<std::string> known = {"correlation", "pc1", "energy", "projection", "rank", "alignment"};
    for (const auto& s : sections)
      if (std::find(known.begin(), known.end(), s) == known.end()) throw UsageError("sections: unknown section '" + s + "'");
    if (scenes < 1) throw UsageError("scenes: must be at least 1");

    // Validate the trace before any expensive work.
    io::NamedTensors trace_deltas;
    if (!trace_dir.empty()) {
      const fs::path f = fs::path(trace_dir) / "deltas.ltto";
      if (!fs::exists(f)) throw UsageError("trace: no adapt output in " + trace_dir);
      trace_deltas = io::read_tensor_file(f);
      if (trace_deltas.empty()) throw UsageError("trace: " + trace_dir + " holds no weight updates");
    }

    const auto m = load_model(model_path);
    const auto cfg = adapt.config(c.seed);
    const auto set = checked("height", [&] { return experiments::make_test_set(scene.test_set(scenes, c.seed)); });
    json index;
    index["files"] = json::array();
    auto emit = [&](const std::string& name, const std::string& text) {
      io::write_text(out / name, text);
      index["files"].push_back(name);
    };

    if (!trace_deltas.empty()) {
      std::string csv = "layer,rows,cols,energy_1,energy_2,energy_4,energy_8\n";
      for (const auto& [name, t] : trace_deltas) {
        const Matrix d = Matrix::from_tensor(t);
        csv += csv_row({name, std::to_string(d.rows), std::to_string(d.cols), fmt(energy_fraction(d, 1)),
                        fmt(energy_fraction(d, 2)), fmt(energy_fraction(d, 4)), fmt(energy_fraction(d, 8))});
      }
      emit("trace_energy.csv", csv);
    }
    if (wants("correlation")) {
      std::string csv = "layer,mean_abs_correlation,degenerate_scenes\n";
      for (const auto& r : experiments::correlation_profile(m, set.scenes))
        csv += csv_row({r.layer, fmt(r.mean_correlation), std::to_string(r.degenerate)});
      emit("correlation.csv", csv);
    }
    if (wants("pc1")) {
      const auto traced = analysis::traced_forward(m, set.scenes.front().image);
      fs::create_directories(out / "pc1");
      for (const auto& e : traced.trace.layers) {
        if (e.features.dim(2) < 2) continue;
        const std::string name = "pc1/" + e.name + ".pfm";
        io::write_pfm(out / name, analysis::pca_pc1_map(e.features));
        index["files"].push_back(name);
      }
    }
    if (wants("energy")) {
      std::string csv = "layer,confined_rank,iterations,energy_4,energy_8,initial_loss,final_loss\n";
      const std::size_t layers = m.decoder().stages.size() + 1;
      for (std::size_t l = 0; l < layers; ++l) {
        for (std::optional<std::size_t> r : {std::optional<std::size_t>(confined_rank), std::optional<std::size_t>()}) {
          const auto row = checked("confined_rank", [&] {
            return experiments::single_layer_energy(m, set.scenes.front(), set.observations.front(), l, r,
                                                    energy_iters, adapt.lr);
          });
          csv += csv_row({row.layer, std::to_string(row.confined_rank), std::to_string(row.iterations),
                          fmt(row.energy_at_4), fmt(row.energy_at_8), fmt(row.initial_loss), fmt(row.final_loss)});
        }
      }
      emit("energy.csv", csv);
    }
    auto sweep_csv = [&](const std::string& first, const std::vector<experiments::SweepRow>& rows) {
      std::string csv = first + ",median_mae,mean_mae,mean_rmse,mean_final_loss\n";
      for (const auto& r : rows)
        csv += csv_row({r.label, fmt(r.median_mae), fmt(r.mean_mae), fmt(r.mean_rmse), fmt(r.mean_final_loss)});
      return csv;
    };
    if (wants("projection")) {
      experiments::ProjectionOptions po;
      po.layer = adapt.projection_layer;
      po.population = population_basis;
      emit("projection_ablation.csv",
           sweep_csv("setting", checked("projections", [&] { return experiments::projection_ablation(m, set, cfg, projections, po); })));
    }
    if (wants("rank")) {
      emit("rank_sweep.csv", sweep_csv("rank", checked("ranks", [&] { return experiments::rank_sweep(m, set, cfg, ranks); })));
    }
    if (wants("alignment")) {
      std::string csv = "layer,feature_energy,update_energy,affinity\n";
      for (const auto& r : checked("k", [&] {
             return experiments::covariance_alignment(m, set.scenes.front(), set.observations.front(), cfg, k);
           }))
        csv += csv_row({r.layer, fmt(r.alignment.feature_energy), fmt(r.alignment.update_energy), fmt(r.alignment.affinity)});
      emit("covariance_alignment.csv", csv);
    }
    write_json(out / "analysis.json", index);
  }
};

// ---- verify -----------------------------------------------------------------

theory::GridSpec parse_grid(const std::string& text) {
  theory::GridSpec g;
  if (text.empty()) return g;
  // Axes not named collapse to their first default value.
  g.d.resize(1);
  g.r.resize(1);
  g.m.resize(1);
  g.steps.resize(1);
  std::istringstream words(text);
  std::string word;
  while (words >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw UsageError("grid: expected key=v1,v2 but got '" + word + "'");
    const std::string key = word.substr(0, eq);
    std::vector<std::size_t> vals;
    std::istringstream list(word.substr(eq + 1));
    std::string v;
    while (std::getline(list, v, ',')) {
      try {
        std::size_t used = 0;
        const unsigned long x = std::stoul(v, &used);
        if (used != v.size() || x == 0) throw std::invalid_argument(v);
        vals.push_back(x);
      } catch (const std::exception&) {
        throw UsageError("grid: bad value '" + v + "' for " + key);
      }
    }
    if (vals.empty()) throw UsageError("grid: no values for " + key);
    if (key == "d") g.d = vals;
    else if (key == "r") g.r = vals;
    else if (key == "m") g.m = vals;
    else if (key == "T") g.steps = vals;
    else throw UsageError("grid: unknown axis '" + key + "' (d, r, m, T)");
  }
  return g;
}

struct VerifyCmd {
  std::string grid;
  std::size_t samples = 10;
  double eps = 0.0;
  bool strict = false;
  std::size_t identity_trials = 1000;
  std::string model_path;
  std::size_t scenes = 20;
  SceneParams scene;

  void add_to(Params& p) {
    p.add("grid", grid, "grid subset, e.g. \"d=16 r=1\"; unnamed axes take their first value");
    p.add("samples", samples, "inputs per scenario");
    p.add("eps", eps, "scale of off-subspace residuals (0: exact)");
    p.flag("strict", strict, "assert the exact rank bound even with residuals");
    p.add("identity_trials", identity_trials, "random (g, eps) pairs for the residual identity");
    p.add("model", model_path, "optional model: adds the decoder rank and linearity checks");
    p.add("scenes", scenes, "test scenes for the model checks");
    scene.add_to(p);
  }

  bool run(const Common& c, const fs::path& out) const {
    theory::GridSpec g = parse_grid(grid);
    g.samples = samples;
    g.eps_scale = eps;
    g.strict = strict;
    if (samples < 1) throw UsageError("samples: must be at least 1");
    if (!(eps >= 0.0)) throw UsageError("eps: must be non-negative");
    std::vector<theory::Verdict> verdicts = theory::run_grid(g, c.seed);

    auto rng = make_rng(c.seed, 3);
    theory::Verdict id;
    id.check = "prop2_identity";
    id.cell = "trials=" + std::to_string(identity_trials);
    const double worst = theory::prop2_identity_violation(identity_trials, 32, 64, rng);
    id.values = {{"max_relative_violation", worst}};
    id.pass = worst < theory::kIdentityTolerance;
    if (!id.pass) id.message = "residual norm identity violated";
    verdicts.push_back(id);

    if (!model_path.empty()) {
      const auto m = load_model(model_path);
      const auto set = checked("height", [&] { return experiments::make_test_set(scene.test_set(scenes, c.seed)); });
      verdicts.push_back(theory::check_prop1_on_model(m, set.scenes.front(), set.observations.front(), 8));
      for (std::size_t i = 0; i < set.scenes.size(); ++i) {
        Tape tape(Tape::Mode::no_grad);
        const Tensor f = model::encode(m, tape, set.scenes[i].image).detached();
        auto rep = theory::linearity_probe(m, f, mix_seed(c.seed, 100 + i));
        rep.verdict.cell = "scene=" + std::to_string(i);
        verdicts.push_back(rep.verdict);
      }
    }

    json arr = json::array();
    std::string csv = "check,cell,pass,message\n";
    std::size_t passed = 0;
    for (const auto& v : verdicts) {
      json values = json::object();
      for (const auto& [k, x] : v.values) values[k] = x;
      arr.push_back({{"check", v.check}, {"cell", v.cell}, {"pass", v.pass}, {"values", values}, {"message", v.message}});
      csv += csv_row({v.check, "\"" + v.cell + "\"", v.pass ? "1" : "0", "\"" + v.message + "\""});
      passed += v.pass;
    }
    write_json(out / "verdicts.json", {{"passed", passed}, {"total", verdicts.size()}, {"verdicts", arr}});
    io::write_text(out / "verdicts.csv", csv);
    std::cout << passed << "/" << verdicts.size() << " verdicts pass\n";
    for (const auto& v : verdicts)
      if (!v.pass) std::cout << "FAIL " << v.check << " [" << v.cell << "] " << v.message << "\n";
    return passed == verdicts.size();
  }
};

// ---- sweep ------------------------------------------------------------------

struct SweepCmd {
  std::string model_path;
  std::vector<std::string> scopes = {"decoder_lora", "encoder_lora", "full_lora", "decoder_ft", "encoder_ft", "full_ft"};
  std::size_t scenes = 20;
  SceneParams scene;
  AdaptParams adapt;

  void add_to(Params& p) {
    p.add("model", model_path, "pretrained model (.ltto)");
    p.add("scopes", scopes, "adaptation scopes to compare");
    p.add("scenes", scenes, "test scenes");
    scene.add_to(p);
    adapt.add_to(p);
  }

  void run(const Common& c, const fs::path& out) const {
    const auto m = load_model(model_path);
    if (scenes < 1) throw UsageError("scenes: must be at least 1");
    std::vector<tto::AdaptConfig> configs;
    for (const auto& s : scopes) {
      AdaptParams a = adapt;
      a.scope = s;
      configs.push_back(a.config(c.seed));
    }
    const auto set = checked("height", [&] { return experiments::make_test_set(scene.test_set(scenes, c.seed)); });
    const auto rep = tto::scope_sweep(m, set.scenes, set.observations, configs);
    std::string csv = "scope,iterations,learning_rate,scenes,failures,mean_mae,mean_rmse,mean_encoder_calls,mean_flops,unstable";
    csv += c.timing ? ",wall_seconds\n" : "\n";
    for (const auto& r : rep.rows) {
      std::vector<std::string> cells = {r.scope, std::to_string(r.iterations), fmt(r.learning_rate),
                                        std::to_string(r.scenes), std::to_string(r.failures), fmt(r.mean_mae),
                                        fmt(r.mean_rmse), fmt(r.mean_encoder_calls), fmt(r.mean_flops),
                                        r.unstable ? "1" : "0"};
      if (c.timing) cells.push_back(fmt(r.wall_seconds));
      csv += csv_row(cells);
    }
    io::write_text(out / "scope_sweep.csv", csv);
    std::string log;
    for (const auto& l : rep.log) log += l + "\n";
    io::write_text(out / "sweep_log.txt", log);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoder-only test-time optimization on a synthetic depth testbed"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app;
    Common common;
    std::unique_ptr<Params> params;
  };
  auto add_sub = [&](const std::string& name, const std::string& help) {
    Sub s{app.add_subcommand(name, help), {}, nullptr};
    return s;
  };

  GenerateCmd gen;
  PretrainCmd pre;
  AdaptCmd ad;
  AnalyzeCmd an;
  VerifyCmd ver;
  SweepCmd sw;
  std::vector<Sub> subs;
  subs.push_back(add_sub("generate", "synthetic scenes and sparse observations"));
  subs.push_back(add_sub("pretrain", "train the frozen foundation model"));
  subs.push_back(add_sub("adapt", "test-time optimization on one scene"));
  subs.push_back(add_sub("analyze", "representation and update-spectrum analyses"));
  subs.push_back(add_sub("verify", "numerical checks of the low-rank results"));
  subs.push_back(add_sub("sweep", "adaptation scope comparison"));
  for (auto& s : subs) {
    s.params = std::make_unique<Params>(s.app);
    s.params->add("seed", s.common.seed, "global seed");
    s.params->add("out", s.common.out, "output directory");
    s.app->add_option("--config", s.common.config, "JSON config; flags override its keys");
    s.app->add_flag("--timing", s.common.timing, "also record wall-clock times");
  }
  gen.add_to(*subs[0].params);
  pre.add_to(*subs[1].params);
  ad.add_to(*subs[2].params);
  an.add_to(*subs[3].params);
  ver.add_to(*subs[4].params);
  sw.add_to(*subs[5].params);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      Sub& s = subs[i];
      if (!s.app->parsed()) continue;
      s.params->resolve(s.common.config);
      json resolved = s.params->resolved(s.app->get_name());
      resolved.erase("out");  // so identical runs into different directories match
      const fs::path out = prepare_out(s.common);
      write_json(out / "config.json", resolved);
      json timing;
      const auto t0 = std::chrono::steady_clock::now();
      bool ok = true;
      switch (i) {
        case 0: gen.run(s.common, out); break;
        case 1: pre.run(s.common, out); break;
        case 2: ad.run(s.common, out, timing); break;
        case 3: an.run(s.common, out); break;
        case 4: ok = ver.run(s.common, out); break;
        case 5: sw.run(s.common, out); break;
      }
      if (s.common.timing) {
        timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(out / "timing.json", timing);
      }
      write_manifest(out);
      return ok ? kExitOk : kExitNumerical;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
