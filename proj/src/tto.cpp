// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/tto.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "ltto/seed.hpp"

namespace ltto::tto {
namespace {

constexpr std::uint64_t kAdapterStream = 21;

enum class Role { weight, bias, lora_a, lora_b };

struct Slot {
  std::string name;
  model::LayerId layer;
  Role role;
  Tensor value;
  Tensor velocity;
};

bool touches_encoder(Scope s) {
  return s == Scope::encoder_lora || s == Scope::full_lora || s == Scope::encoder_ft ||
         s == Scope::full_ft;
}
bool touches_decoder(Scope s) {
  return s == Scope::decoder_lora || s == Scope::full_lora || s == Scope::decoder_ft ||
         s == Scope::full_ft;
}
bool is_lora(Scope s) {
  return s == Scope::decoder_lora || s == Scope::encoder_lora || s == Scope::full_lora;
}

model::Bindings bind_slots(const std::vector<Slot>& slots, const std::vector<Tensor>& values,
                           double lora_scale) {
  model::Bindings bind;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& lp = bind[slots[i].layer];
    lp.lora_scale = lora_scale;
    switch (slots[i].role) {
      case Role::weight: lp.weight = values[i]; break;
      case Role::bias: lp.bias = values[i]; break;
      case Role::lora_a: lp.lora_a = values[i]; break;
      case Role::lora_b: lp.lora_b = values[i]; break;
    }
  }
  return bind;
}

Tensor frozen_features(const model::FoundationModel& model, const Tensor& image,
                       std::uint64_t& calls, std::uint64_t& flops) {
  Tape tape(Tape::Mode::no_grad);
  Tensor f = model::encode(model, tape, image).detached();
  ++calls;
  flops = tape.flops().forward;
  return f;
}

// Closing step shared with the baseline: decode, fit, apply.
void finish(AdaptResult& r, const Tensor& depth, const world::SparseObservation& obs) {
  r.depth = depth.detached();
  const auto fit = align::fit_or_fallback(align::values_at(r.depth, obs), obs.values);
  r.scale_shift = fit.ss;
  r.fallback = fit.fallback;
  r.aligned = align::apply(r.depth, fit.ss);
}

void check_observations(const Tensor& image, const world::SparseObservation& obs) {
  if (obs.size() == 0) throw std::invalid_argument("adapt: observation set is empty");
  if (obs.values.size() != obs.size()) {
    throw std::invalid_argument("adapt: observation values and pixels differ in count");
  }
  if (image.rank() != 3) throw ShapeError("adapt: image must be H×W×3");
  for (const auto& p : obs.omega) {
    if (p.row >= image.dim(0) || p.col >= image.dim(1)) {
      throw std::out_of_range("adapt: observation (" + std::to_string(p.row) + ", " +
                              std::to_string(p.col) + ") outside the image");
    }
  }
  if (obs.width != image.dim(1)) {
    throw std::invalid_argument("adapt: observation width does not match the image");
  }
}

}  // namespace

std::string_view to_string(Scope scope) {
  switch (scope) {
    case Scope::decoder_lora: return "decoder_lora";
    case Scope::encoder_lora: return "encoder_lora";
    case Scope::full_lora: return "full_lora";
    case Scope::decoder_ft: return "decoder_ft";
    case Scope::encoder_ft: return "encoder_ft";
    case Scope::full_ft: return "full_ft";
  }
  return "unknown";
}

Scope parse_scope(std::string_view name) {
  for (Scope s : {Scope::decoder_lora, Scope::encoder_lora, Scope::full_lora, Scope::decoder_ft,
                  Scope::encoder_ft, Scope::full_ft}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown scope '" + std::string(name) + "'");
}

void AdaptConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive and finite");
  }
  if (rank < 1) throw std::invalid_argument("rank must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (projection && projection->k < 1) throw std::invalid_argument("projection k must be at least 1");
}

double sparse_loss(const Tensor& aligned, const world::SparseObservation& obs, bool unnormalized) {
  if (obs.size() == 0) throw std::invalid_argument("sparse_loss: observation set is empty");
  double acc = 0.0;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const std::size_t i = std::size_t{obs.omega[k].row} * obs.width + obs.omega[k].col;
    if (i >= aligned.numel()) throw std::out_of_range("sparse_loss: observation outside the map");
    const double r = aligned[i] - obs.values[k];
    acc += r * r;
  }
  return unnormalized ? acc : acc / static_cast<double>(obs.size());
}

AdaptResult adapt(const model::FoundationModel& model, const Tensor& image,
                  const world::SparseObservation& obs, const AdaptConfig& cfg) {
  cfg.validate();
  check_observations(image, obs);
  const auto start = std::chrono::steady_clock::now();
  const bool enc_scope = touches_encoder(cfg.scope);
  const bool dec_scope = touches_decoder(cfg.scope);
  const bool lora = is_lora(cfg.scope);

  AdaptResult r;
  std::vector<Slot> slots;
  auto rng = make_rng(cfg.seed, kAdapterStream);
  for (auto part : {model::Part::encoder, model::Part::decoder}) {
    if ((part == model::Part::encoder && !enc_scope) || (part == model::Part::decoder && !dec_scope)) {
      continue;
    }
    for (model::LayerId id : model.layers(part)) {
      if (part == model::Part::decoder && cfg.decoder_layers &&
          std::find(cfg.decoder_layers->begin(), cfg.decoder_layers->end(), id.index) ==
              cfg.decoder_layers->end()) {
        continue;
      }
      const model::Linear& lin = model.linear(id);
      const std::string name = model.layer_name(id);
      if (lora) {
        auto ad = model::LoraAdapter::create(lin.in(), lin.out(), cfg.rank, rng);
        r.lora_scale = ad.scale();
        slots.push_back({name + ".lora_a", id, Role::lora_a, ad.a, Tensor(ad.a.shape())});
        slots.push_back({name + ".lora_b", id, Role::lora_b, ad.b, Tensor(ad.b.shape())});
      } else {
        slots.push_back({name + ".weight", id, Role::weight, lin.weight.detached(),
                         Tensor(lin.weight.shape())});
        slots.push_back({name + ".bias", id, Role::bias, lin.bias.detached(),
                         Tensor(lin.bias.shape())});
      }
    }
  }
  if (cfg.decoder_layers) {
    for (std::size_t l : *cfg.decoder_layers) {
      if (l > model.decoder().stages.size()) {
        throw std::invalid_argument("decoder_layers: no decoder layer " + std::to_string(l));
      }
    }
  }
  for (const auto& s : slots) r.initial_parameters[s.name] = s.value.detached();

  std::uint64_t calls = 0, enc_flops = 0;
  Tensor cached;
  if (!enc_scope && cfg.cache_features) cached = frozen_features(model, image, calls, enc_flops);

  std::optional<model::FeatureMap> hook = cfg.projection_map;
  if (!hook && cfg.projection && cfg.projection->mode != analysis::ProjectionSpec::Mode::none) {
    std::uint64_t unused = 0;
    const Tensor basis_source =
        cached.numel() > 0 ? cached : frozen_features(model, image, calls, unused);
    hook = analysis::projection_hook(model, basis_source, *cfg.projection);
  }

  const Tensor targets = Tensor::vector(obs.values);
  Tensor last_features = cached;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tape tape;
    std::vector<Tensor> bound;
    bound.reserve(slots.size());
    for (const auto& s : slots) bound.push_back(tape.parameter(s.value));
    const model::Bindings bind = bind_slots(slots, bound, r.lora_scale);

    Tensor f;
    std::uint64_t iter_enc_flops = 0;
    if (enc_scope) {
      model::EncodeOptions eo;
      eo.bindings = &bind;
      f = model::encode(model, tape, image, eo);
      ++calls;
    } else if (cfg.cache_features) {
      f = cached;
    } else {
      f = frozen_features(model, image, calls, iter_enc_flops);
      enc_flops = iter_enc_flops;
      last_features = f;
    }
    model::DecodeOptions dopt;
    dopt.bindings = &bind;
    dopt.projection = hook ? &*hook : nullptr;
    const Tensor depth = model::decode(model, tape, f, dopt);

    align::FitOutcome fit;
    const Tensor aligned = align::aligned_at_omega(tape, depth, obs, cfg.detach_alignment, &fit);
    const Tensor sq = ops::square(tape, ops::sub(tape, aligned, targets));
    const Tensor loss = cfg.unnormalized ? ops::sum(tape, sq) : ops::mean(tape, sq);
    if (!std::isfinite(loss.item())) {
      throw NumericalError("adapt: non-finite loss at iteration " + std::to_string(t));
    }
    const Gradients grads = backward(tape, loss);

    IterationRecord rec;
    rec.t = t;
    rec.loss = loss.item();
    rec.a = fit.ss.a;
    rec.b = fit.ss.b;
    rec.fallback = fit.fallback;
    rec.flops = tape.flops().total() + iter_enc_flops;
    r.trace.iterations.push_back(rec);

    StepGradients logged;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const Tensor& g = grads.of(bound[i]);
      if (cfg.record_gradients) logged[slots[i].name] = g.detached();
      auto& v = slots[i].value.storage();
      if (cfg.momentum > 0.0) {
        auto& vel = slots[i].velocity.storage();
        for (std::size_t k = 0; k < v.size(); ++k) {
          vel[k] = cfg.momentum * vel[k] + g[k];
          v[k] -= cfg.learning_rate * vel[k];
        }
      } else {
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= cfg.learning_rate * g[k];
      }
    }
    if (cfg.record_gradients) r.trace.gradients.push_back(std::move(logged));
  }

  // Prediction with the final parameters.
  std::vector<Tensor> values;
  for (const auto& s : slots) values.push_back(s.value);
  const model::Bindings bind = bind_slots(slots, values, r.lora_scale);
  Tape tape(Tape::Mode::no_grad);
  Tensor f;
  if (enc_scope) {
    model::EncodeOptions eo;
    eo.bindings = &bind;
    f = model::encode(model, tape, image, eo);
    ++calls;
  } else {
    f = last_features;
  }
  model::DecodeOptions dopt;
  dopt.bindings = &bind;
  dopt.projection = hook ? &*hook : nullptr;
  finish(r, model::decode(model, tape, f, dopt), obs);

  for (const auto& s : slots) r.final_parameters[s.name] = s.value.detached();
  for (std::size_t i = 0; i + 1 < slots.size(); i += 2) {
    const std::string layer = model.layer_name(slots[i].layer);
    if (lora) {
      model::LoraAdapter ad{slots[i].value, slots[i + 1].value, r.lora_scale * static_cast<double>(cfg.rank)};
      r.deltas[layer] = model::effective_delta(ad);
    } else {
      r.deltas[layer] = Matrix::from_tensor(slots[i].value) -
                        Matrix::from_tensor(model.linear(slots[i].layer).weight);
    }
  }
  r.trace.encoder_calls = calls;
  r.trace.encoder_flops = enc_flops;
  r.trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

AdaptResult adapt(const model::FoundationModel& model, const world::SceneSample& scene,
                  const world::SparseObservation& obs, const AdaptConfig& config) {
  AdaptResult r = adapt(model, scene.image, obs, config);
  r.metrics = world::mae_rmse(r.aligned, world::sensor_frame_depth(scene, obs));
  return r;
}

AdaptResult zero_shot_baseline(const model::FoundationModel& model, const Tensor& image,
                               const world::SparseObservation& obs) {
  check_observations(image, obs);
  AdaptResult r;
  std::uint64_t calls = 0, flops = 0;
  const Tensor f = frozen_features(model, image, calls, flops);
  Tape tape(Tape::Mode::no_grad);
  finish(r, model::decode(model, tape, f), obs);
  r.trace.encoder_calls = calls;
  r.trace.encoder_flops = flops;
  return r;
}

AdaptResult zero_shot_baseline(const model::FoundationModel& model,
                               const world::SceneSample& scene,
                               const world::SparseObservation& obs) {
  AdaptResult r = zero_shot_baseline(model, scene.image, obs);
  r.metrics = world::mae_rmse(r.aligned, world::sensor_frame_depth(scene, obs));
  return r;
}

SweepReport scope_sweep(const model::FoundationModel& model,
                        const std::vector<world::SceneSample>& scenes,
                        const std::vector<world::SparseObservation>& observations,
                        const std::vector<AdaptConfig>& configs) {
  if (scenes.size() != observations.size()) {
    throw std::invalid_argument("scope_sweep: one observation set per scene is required");
  }
  SweepReport report;
  for (const auto& cfg : configs) {
    cfg.validate();
    ScopeRow row;
    row.scope = std::string(to_string(cfg.scope));
    row.iterations = cfg.iterations;
    row.learning_rate = cfg.learning_rate;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      try {
        const AdaptResult r = adapt(model, scenes[i], observations[i], cfg);
        row.mean_mae += r.metrics->mae;
        row.mean_rmse += r.metrics->rmse;
        row.mean_encoder_calls += static_cast<double>(r.trace.encoder_calls);
        std::uint64_t fl = 0;
        for (const auto& it : r.trace.iterations) fl += it.flops;
        if (cfg.cache_features && !touches_encoder(cfg.scope)) fl += r.trace.encoder_flops;
        row.mean_flops += static_cast<double>(fl);
        row.wall_seconds += r.trace.wall_seconds;
        ++row.scenes;
      } catch (const NumericalError& e) {
        ++row.failures;
        row.unstable = true;
        report.log.push_back(row.scope + " scene " + std::to_string(i) + ": " + e.what());
      }
    }
    if (row.scenes > 0) {
      const double n = static_cast<double>(row.scenes);
      row.mean_mae /= n;
      row.mean_rmse /= n;
      row.mean_encoder_calls /= n;
      row.mean_flops /= n;
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace ltto::tto
