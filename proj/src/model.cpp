// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ltto/alignment.hpp"
#include "ltto/seed.hpp"

namespace ltto::model {
namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kShuffleStream = 12;
constexpr double kContextWeight = 0.25;
constexpr double kHeadBias = 1.1;  // exp(1.1) ≈ 3 m

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

Linear he_linear(std::size_t in, std::size_t out, double gain, double bias_range,
                 std::mt19937_64& rng) {
  Linear l;
  l.weight = gaussian({out, in}, gain * std::sqrt(2.0 / static_cast<double>(in)), rng);
  l.bias = Tensor({out});
  std::uniform_real_distribution<double> u(-bias_range, bias_range);
  for (double& v : l.bias.storage()) v = u(rng);
  return l;
}

const LayerParams* find(const Bindings* bindings, LayerId id) {
  if (!bindings) return nullptr;
  auto it = bindings->find(id);
  return it == bindings->end() ? nullptr : &it->second;
}

// x (N×in) → N×out through the frozen layer or its bound replacement.
Tensor apply_linear(Tape& tape, const Linear& frozen, const LayerParams* p, const Tensor& x,
                    const std::string& name) {
  Tensor w = p && p->weight ? *p->weight : frozen.weight;
  const Tensor& bias = p && p->bias ? *p->bias : frozen.bias;
  if (p && (p->lora_a || p->lora_b)) {
    if (!p->lora_a || !p->lora_b) {
      throw std::invalid_argument(name + ": LoRA binding needs both factors");
    }
    const Tensor& a = *p->lora_a;
    const Tensor& b = *p->lora_b;
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != frozen.in() || b.dim(0) != frozen.out() ||
        a.dim(0) != b.dim(1)) {
      throw ShapeError(name + ": adapter shapes A " + shape_str(a.shape()) + ", B " +
                       shape_str(b.shape()) + " do not fit weight " +
                       shape_str(frozen.weight.shape()));
    }
    Tensor delta = ops::matmul(tape, b, a);
    if (p->lora_scale != 1.0) delta = ops::scalar_mul(tape, delta, p->lora_scale);
    w = ops::add(tape, w, delta);
  }
  if (x.rank() != 2 || x.dim(1) != frozen.in()) {
    throw ShapeError(name + ": input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(frozen.weight.shape()));
  }
  return ops::add(tape, ops::matmul(tape, x, ops::transpose(tape, w)), bias);
}

std::vector<std::size_t> patch_indices(std::size_t h, std::size_t w, std::size_t p) {
  std::vector<std::size_t> idx;
  idx.reserve(h * w * 3);
  for (std::size_t ty = 0; ty < h / p; ++ty)
    for (std::size_t tx = 0; tx < w / p; ++tx)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t c = 0; c < 3; ++c)
            idx.push_back(((ty * p + dy) * w + tx * p + dx) * 3 + c);
  return idx;
}

void record_trace(Trace* trace, std::string name, const Tensor& features, const Tensor& pre,
                  std::size_t h, std::size_t w) {
  if (!trace) return;
  TraceEntry e;
  e.name = std::move(name);
  e.features = features.detached().reshaped({h, w, features.numel() / (h * w)});
  if (pre.numel() > 0) e.preactivation = pre.detached().reshaped(e.features.shape());
  trace->layers.push_back(std::move(e));
}

void append(io::NamedTensors& out, const std::string& name, const Linear& l) {
  out.emplace_back(name + ".weight", l.weight.detached());
  out.emplace_back(name + ".bias", l.bias.detached());
}

}  // namespace

FoundationModel::FoundationModel(Encoder encoder, Decoder decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  if (decoder_.stages.empty()) throw std::invalid_argument("model: decoder has no stages");
  std::size_t c = encoder_.width();
  for (const auto& s : decoder_.stages) {
    if (s.in() != c) throw ShapeError("model: decoder stage widths do not chain");
    c = s.out();
  }
  if (decoder_.head.in() != c || decoder_.head.out() != 1) {
    throw ShapeError("model: head must map " + std::to_string(c) + " channels to 1");
  }
  if (encoder_.embed.in() != 3 * encoder_.patch_size * encoder_.patch_size) {
    throw ShapeError("model: embed input does not match patch size");
  }
}

FoundationModel::FoundationModel(const FoundationModel& other)
    : encoder_(other.encoder_), decoder_(other.decoder_), encoder_calls_(0) {}

FoundationModel& FoundationModel::operator=(const FoundationModel& other) {
  encoder_ = other.encoder_;
  decoder_ = other.decoder_;
  encoder_calls_.store(0);
  return *this;
}

FoundationModel FoundationModel::random_init(const ModelConfig& cfg) {
  if (cfg.patch_size == 0 || cfg.decoder_widths.empty()) {
    throw std::invalid_argument("model config: patch size and decoder widths must be nonzero");
  }
  auto rng = make_rng(cfg.seed, kInitStream);
  Encoder enc;
  enc.patch_size = cfg.patch_size;
  enc.embed = he_linear(3 * cfg.patch_size * cfg.patch_size, cfg.encoder_width, 1.0, 0.5, rng);
  for (std::size_t k = 0; k < cfg.encoder_blocks; ++k) {
    EncoderBlock b;
    b.expand = he_linear(cfg.encoder_width, cfg.encoder_hidden, 1.0, 0.1, rng);
    b.project = he_linear(cfg.encoder_hidden, cfg.encoder_width, 0.35, 0.0, rng);
    enc.blocks.push_back(std::move(b));
  }
  Decoder dec;
  std::size_t c = cfg.encoder_width;
  for (std::size_t w : cfg.decoder_widths) {
    dec.stages.push_back(he_linear(c, w, 1.0, 0.05, rng));
    c = w;
  }
  dec.head = he_linear(c, 1, 0.1, 0.0, rng);
  dec.head.bias[0] = kHeadBias;
  return FoundationModel(std::move(enc), std::move(dec));
}

std::vector<LayerId> FoundationModel::layers(Part part) const {
  const std::size_t n = part == Part::encoder ? 1 + 2 * encoder_.blocks.size()
                                              : decoder_.stages.size() + 1;
  std::vector<LayerId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({part, i});
  return out;
}

const Linear& FoundationModel::linear(LayerId id) const {
  if (id.part == Part::encoder) {
    if (id.index == 0) return encoder_.embed;
    const std::size_t k = (id.index - 1) / 2;
    if (k >= encoder_.blocks.size()) throw std::out_of_range("model: no encoder layer " + std::to_string(id.index));
    return id.index % 2 == 1 ? encoder_.blocks[k].expand : encoder_.blocks[k].project;
  }
  if (id.index < decoder_.stages.size()) return decoder_.stages[id.index];
  if (id.index == decoder_.stages.size()) return decoder_.head;
  throw std::out_of_range("model: no decoder layer " + std::to_string(id.index));
}

std::string FoundationModel::layer_name(LayerId id) const {
  if (id.part == Part::encoder) {
    if (id.index == 0) return "enc.embed";
    const std::size_t k = (id.index - 1) / 2;
    return "enc.block" + std::to_string(k) + (id.index % 2 == 1 ? ".expand" : ".project");
  }
  if (id.index == decoder_.stages.size()) return "dec.head";
  return "dec.stage" + std::to_string(id.index);
}

io::NamedTensors FoundationModel::to_tensors() const {
  io::NamedTensors out;
  for (auto part : {Part::encoder, Part::decoder})
    for (LayerId id : layers(part)) append(out, layer_name(id), linear(id));
  return out;
}

FoundationModel FoundationModel::from_tensors(const io::NamedTensors& tensors) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, t).second) throw io::FormatError("model file: duplicate tensor '" + name + "'");
  }
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw io::FormatError("model file: missing tensor '" + name + "'");
    Tensor t = it->second;
    by_name.erase(it);
    return t;
  };
  auto take_linear = [&](const std::string& prefix) {
    Linear l{take(prefix + ".weight"), take(prefix + ".bias")};
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(0)) {
      throw io::FormatError("model file: malformed layer '" + prefix + "'");
    }
    return l;
  };

  Encoder enc;
  enc.embed = take_linear("enc.embed");
  const auto p = static_cast<std::size_t>(std::lround(std::sqrt(enc.embed.in() / 3.0)));
  enc.patch_size = p;
  for (std::size_t k = 0; by_name.count("enc.block" + std::to_string(k) + ".expand.weight"); ++k) {
    const std::string b = "enc.block" + std::to_string(k);
    enc.blocks.push_back({take_linear(b + ".expand"), take_linear(b + ".project")});
  }
  Decoder dec;
  for (std::size_t l = 0; by_name.count("dec.stage" + std::to_string(l) + ".weight"); ++l) {
    dec.stages.push_back(take_linear("dec.stage" + std::to_string(l)));
  }
  dec.head = take_linear("dec.head");
  if (!by_name.empty()) {
    throw io::FormatError("model file: unexpected tensor '" + by_name.begin()->first + "'");
  }
  try {
    return FoundationModel(std::move(enc), std::move(dec));
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("model file: ") + e.what());
  }
}

void FoundationModel::save(const std::filesystem::path& path) const {
  io::write_tensor_file(path, to_tensors());
}

FoundationModel FoundationModel::load(const std::filesystem::path& path) {
  return from_tensors(io::read_tensor_file(path));
}

std::string FoundationModel::digest(Part part) const {
  io::NamedTensors sel;
  for (LayerId id : layers(part)) append(sel, layer_name(id), linear(id));
  return io::sha256_hex(io::encode_tensors(sel));
}

LoraAdapter LoraAdapter::create(std::size_t in, std::size_t out, std::size_t rank,
                                std::mt19937_64& rng) {
  if (rank == 0) throw std::invalid_argument("LoRA rank must be at least 1");
  LoraAdapter ad;
  ad.a = gaussian({rank, in}, 1.0 / std::sqrt(static_cast<double>(rank)), rng);
  ad.b = Tensor({out, rank});
  ad.alpha = static_cast<double>(rank);
  return ad;
}

Matrix effective_delta(const LoraAdapter& adapter) {
  return adapter.scale() * (Matrix::from_tensor(adapter.b) * Matrix::from_tensor(adapter.a));
}

Tensor encode(const FoundationModel& model, Tape& tape, const Tensor& image,
              const EncodeOptions& options) {
  const Encoder& enc = model.encoder();
  const std::size_t p = enc.patch_size;
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("encode: expected H×W×3 image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (h % p != 0 || w % p != 0 || h == 0 || w == 0) {
    throw std::invalid_argument("encode: image " + std::to_string(h) + "×" + std::to_string(w) +
                                " is not divisible by patch size " + std::to_string(p));
  }
  model.count_encoder_call();
  const std::size_t hp = h / p, wp = w / p, tokens = hp * wp;
  const Bindings* bind = options.bindings;

  Tensor x = ops::gather(tape, image, patch_indices(h, w, p));
  x = ops::reshape(tape, x, {tokens, 3 * p * p});
  Tensor pre = apply_linear(tape, enc.embed, find(bind, {Part::encoder, 0}), x, "enc.embed");
  Tensor hid = ops::relu(tape, pre);
  record_trace(options.trace, "enc.embed", hid, pre, hp, wp);

  for (std::size_t k = 0; k < enc.blocks.size(); ++k) {
    const std::string name = "enc.block" + std::to_string(k);
    Tensor z_pre = apply_linear(tape, enc.blocks[k].expand, find(bind, {Part::encoder, 2 * k + 1}),
                                hid, name + ".expand");
    Tensor z = ops::relu(tape, z_pre);
    Tensor u = apply_linear(tape, enc.blocks[k].project, find(bind, {Part::encoder, 2 * k + 2}), z,
                            name + ".project");
    hid = ops::add(tape, hid, u);
    record_trace(options.trace, name, hid, Tensor(), hp, wp);
  }

  // Context mixing: a coarse, smoothed copy of the map added back at low weight.
  const std::size_t c = enc.width();
  Tensor grid = ops::reshape(tape, hid, {hp, wp, c});
  const std::size_t ch = std::max<std::size_t>(1, hp / 2), cw = std::max<std::size_t>(1, wp / 2);
  Tensor ctx = ops::resample(tape, grid, bilinear_resize_map(hp, wp, ch, cw));
  ctx = ops::resample(tape, ctx, bilinear_resize_map(ch, cw, hp, wp));
  ctx = ops::resample(tape, ctx, box_smoothing_map(hp, wp, 1));
  Tensor f = ops::add(tape, grid, ops::scalar_mul(tape, ctx, kContextWeight));
  record_trace(options.trace, "enc.out", f, Tensor(), hp, wp);
  return f;
}

Tensor decode_log_depth(const FoundationModel& model, Tape& tape, const Tensor& features,
                        const DecodeOptions& options) {
  const Decoder& dec = model.decoder();
  const std::size_t p = model.encoder().patch_size;
  if (features.rank() != 3 || features.dim(2) != model.encoder().width()) {
    throw ShapeError("decode: features " + shape_str(features.shape()) + " do not match encoder width " +
                     std::to_string(model.encoder().width()));
  }
  const std::size_t out_h = features.dim(0) * p, out_w = features.dim(1) * p;
  const FeatureMap* proj = options.projection;
  const Bindings* bind = options.bindings;
  std::size_t h = features.dim(0), w = features.dim(1);

  auto project = [&](const Tensor& x, std::size_t layer) {
    if (options.trace) {
      options.trace->decoder_inputs.push_back(x.detached().reshaped({h, w, x.dim(1)}));
    }
    if (!proj || proj->layer != layer) return x;
    const std::size_t c = x.dim(1);
    if (proj->matrix.rank() != 2 || proj->matrix.dim(0) != c || proj->matrix.dim(1) != c ||
        proj->offset.numel() != c) {
      throw ShapeError("decode: projection " + shape_str(proj->matrix.shape()) +
                       " does not fit " + std::to_string(c) + " channels");
    }
    return ops::add(tape, ops::matmul(tape, x, proj->matrix), proj->offset);
  };

  Tensor x = ops::reshape(tape, features, {h * w, features.dim(2)});
  for (std::size_t l = 0; l < dec.stages.size(); ++l) {
    const std::string name = "dec.stage" + std::to_string(l);
    x = project(x, l);
    Tensor pre = apply_linear(tape, dec.stages[l], find(bind, {Part::decoder, l}), x, name);
    Tensor y = ops::relu(tape, pre);
    record_trace(options.trace, name, y, pre, h, w);
    const std::size_t c = dec.stages[l].out();
    std::size_t nh = h, nw = w;
    if (l + 1 == dec.stages.size()) {
      nh = out_h;
      nw = out_w;
    } else if (h < out_h || w < out_w) {
      nh = std::min(2 * h, out_h);
      nw = std::min(2 * w, out_w);
    }
    if (nh != h || nw != w) {
      Tensor grid = ops::reshape(tape, y, {h, w, c});
      grid = ops::resample(tape, grid, bilinear_resize_map(h, w, nh, nw));
      h = nh;
      w = nw;
      y = ops::reshape(tape, grid, {h * w, c});
    }
    x = y;
  }
  const std::size_t head_index = dec.stages.size();
  x = project(x, head_index);
  Tensor logd = apply_linear(tape, dec.head, find(bind, {Part::decoder, head_index}), x, "dec.head");
  logd = ops::reshape(tape, logd, {h, w});
  record_trace(options.trace, "dec.head", logd, Tensor(), h, w);
  return logd;
}

Tensor decode(const FoundationModel& model, Tape& tape, const Tensor& features,
              const DecodeOptions& options) {
  Tensor logd = decode_log_depth(model, tape, features, options);
  // Clamping the logarithm keeps exp finite and is equivalent to clamping depth.
  logd = ops::clamp(tape, logd, std::log(kDepthFloor), std::log(kDepthCeiling));
  return ops::exp(tape, logd);
}

Tensor decode_with_adapters(const FoundationModel& model, const Tensor& features,
                            const std::map<std::size_t, LoraAdapter>& adapters,
                            const FeatureMap* projection) {
  Tape tape(Tape::Mode::no_grad);
  Bindings bind;
  for (const auto& [layer, ad] : adapters) {
    LayerParams lp;
    lp.lora_a = ad.a;
    lp.lora_b = ad.b;
    lp.lora_scale = ad.scale();
    bind[{Part::decoder, layer}] = std::move(lp);
  }
  DecodeOptions opt;
  opt.bindings = &bind;
  opt.projection = projection;
  return decode(model, tape, features, opt).detached();
}

Tensor predict(const FoundationModel& model, const Tensor& image) {
  Tape tape(Tape::Mode::no_grad);
  Tensor f = encode(model, tape, image);
  return decode(model, tape, f).detached();
}

std::string image_digest(const Tensor& image) {
  const auto& d = image.storage();
  std::vector<std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(d.data()),
                                  reinterpret_cast<const std::uint8_t*>(d.data() + d.size()));
  for (std::size_t e : image.shape()) {
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<std::uint8_t>(e >> (8 * k)));
  }
  return io::sha256_hex(bytes);
}

const Tensor& FeatureCache::features(const FoundationModel& model, const Tensor& image) {
  std::string h = image_digest(image);
  if (!source_hash_.empty() && h == source_hash_) {
    ++hits_;
    return features_;
  }
  ++misses_;
  Tape tape(Tape::Mode::no_grad);
  features_ = encode(model, tape, image).detached();
  source_hash_ = std::move(h);
  return features_;
}

namespace {

struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  void update(std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (m.empty()) {
      for (auto* p : params) {
        m.emplace_back(p->numel(), 0.0);
        v.emplace_back(p->numel(), 0.0);
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i]->storage();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double g = grads[i][k];
        m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g;
        v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g * g;
        w[k] -= lr * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + eps);
      }
    }
  }
};

// Scale-invariant log-depth loss: variance over pixels of log D̂ − log D.
// A global depth factor is free; orientation and relative scale are not.
Tensor si_log_loss(Tape& tape, const Tensor& log_pred, const Tensor& log_truth) {
  Tensor d = ops::sub(tape, ops::reshape(tape, log_pred, {log_pred.numel()}), log_truth);
  return ops::sub(tape, ops::mean(tape, ops::square(tape, d)),
                  ops::square(tape, ops::mean(tape, d)));
}

}  // namespace

ValidationScores evaluate_depth(const FoundationModel& model,
                                const std::vector<world::SceneSample>& scenes) {
  ValidationScores s;
  if (scenes.empty()) return s;
  for (const auto& scene : scenes) {
    const Tensor pred = predict(model, scene.image);
    const auto fit = align::fit_or_fallback(pred.storage(), scene.depth.storage());
    s.aligned_rmse += world::mae_rmse(align::apply(pred, fit.ss), scene.depth).rmse;
    std::vector<double> sorted = scene.depth.storage();
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const Tensor med = Tensor::full(scene.depth.shape(), sorted[sorted.size() / 2]);
    s.median_rmse += world::mae_rmse(med, scene.depth).rmse;
  }
  s.aligned_rmse /= static_cast<double>(scenes.size());
  s.median_rmse /= static_cast<double>(scenes.size());
  return s;
}

Pretrained pretrain(const std::vector<world::SceneSample>& population,
                    const PretrainConfig& config) {
  if (population.empty()) throw std::invalid_argument("pretrain: population is empty");
  if (config.batch_size == 0) throw std::invalid_argument("pretrain: batch size must be positive");
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  FoundationModel init = FoundationModel::random_init(mc);
  Encoder enc = init.encoder();
  Decoder dec = init.decoder();

  const std::size_t n = population.size();
  const std::size_t n_val = n >= 2 ? std::max<std::size_t>(1, n / 10) : 0;
  const std::size_t n_train = n - n_val;

  std::vector<Tensor> feats, log_depth;
  feats.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    Tape tape(Tape::Mode::no_grad);
    feats.push_back(encode(init, tape, population[i].image).detached());
    Tensor ld = population[i].depth.reshaped({population[i].depth.numel()});
    for (double& v : ld.storage()) v = std::log(v);
    log_depth.push_back(std::move(ld));
  }

  std::vector<Tensor*> params;
  for (auto& s : dec.stages) {
    params.push_back(&s.weight);
    params.push_back(&s.bias);
  }
  params.push_back(&dec.head.weight);
  params.push_back(&dec.head.bias);

  Adam adam;
  adam.lr = config.learning_rate;
  auto rng = make_rng(config.seed, kShuffleStream);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  PretrainReport report;
  report.train_scenes = n_train;
  report.validation_scenes = n_val;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      Tape tape;
      Bindings bind;
      std::vector<Tensor> bound;
      for (std::size_t l = 0; l <= dec.stages.size(); ++l) {
        const Linear& lin = l < dec.stages.size() ? dec.stages[l] : dec.head;
        LayerParams lp;
        lp.weight = tape.parameter(lin.weight);
        lp.bias = tape.parameter(lin.bias);
        bound.push_back(*lp.weight);
        bound.push_back(*lp.bias);
        bind[{Part::decoder, l}] = std::move(lp);
      }
      DecodeOptions opt;
      opt.bindings = &bind;
      Tensor total;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        Tensor logd = decode_log_depth(init, tape, feats[i], opt);
        logd = ops::clamp(tape, logd, std::log(kDepthFloor), std::log(kDepthCeiling));
        Tensor loss = si_log_loss(tape, logd, log_depth[i]);
        total = total.numel() == 0 ? loss : ops::add(tape, total, loss);
      }
      total = ops::scalar_mul(tape, total, 1.0 / static_cast<double>(stop - start));
      if (!std::isfinite(total.item())) {
        throw NumericalError("pretrain: loss diverged in epoch " + std::to_string(epoch));
      }
      epoch_loss += total.item() * static_cast<double>(stop - start);
      const Gradients g = backward(tape, total);
      std::vector<Tensor> grads;
      for (const auto& b : bound) grads.push_back(g.of(b));
      adam.update(params, grads);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(n_train));
  }

  // The loss leaves the global depth factor free. Fold the mean log ratio
  // over the training scenes into the head bias so predictions are metric
  // on average; the training loss is unchanged by this shift.
  {
    FoundationModel fitted(enc, dec);
    double shift = 0.0, count = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      Tape tape(Tape::Mode::no_grad);
      const Tensor logd = decode_log_depth(fitted, tape, feats[i]);
      for (std::size_t k = 0; k < logd.numel(); ++k) shift += log_depth[i][k] - logd[k];
      count += static_cast<double>(logd.numel());
    }
    dec.head.bias[0] += shift / count;
  }

  // ReLU stages are positively homogeneous, so scaling stage l by c_l and
  // dividing the next layer's weight by c_l leaves the function unchanged.
  // Bringing every stage to a common RMS keeps later gradient steps on the
  // decoder well conditioned.
  if (config.stage_rms > 0.0) {
    FoundationModel fitted(enc, dec);
    std::vector<double> sq(dec.stages.size(), 0.0), cnt(dec.stages.size(), 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      Tape tape(Tape::Mode::no_grad);
      Trace trace;
      DecodeOptions opt;
      opt.trace = &trace;
      decode_log_depth(fitted, tape, feats[i], opt);
      // Spatial variance per channel; the per-pixel mean is what alignment
      // already absorbs, so it should not set the scale.
      for (std::size_t l = 0; l < dec.stages.size(); ++l) {
        const Tensor& x = trace.decoder_inputs[l + 1];
        const std::size_t c = x.dim(2), n = x.numel() / c;
        for (std::size_t j = 0; j < c; ++j) {
          double m = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            m += x[i * c + j];
            m2 += x[i * c + j] * x[i * c + j];
          }
          m /= static_cast<double>(n);
          sq[l] += m2 / static_cast<double>(n) - m * m;
        }
        cnt[l] += static_cast<double>(c);
      }
    }
    double prev = 1.0;
    for (std::size_t l = 0; l <= dec.stages.size(); ++l) {
      Linear& lin = l < dec.stages.size() ? dec.stages[l] : dec.head;
      double c = 1.0;
      if (l < dec.stages.size()) {
        const double rms = std::sqrt(sq[l] / cnt[l]);
        if (rms > 0.0) c = config.stage_rms / rms;
        for (double& v : lin.bias.storage()) v *= c;
      }
      for (double& v : lin.weight.storage()) v *= c / prev;
      prev = c;
    }
  }

  FoundationModel trained(std::move(enc), std::move(dec));
  if (n_val > 0) {
    std::vector<world::SceneSample> val(population.end() - static_cast<std::ptrdiff_t>(n_val),
                                        population.end());
    const ValidationScores vs = evaluate_depth(trained, val);
    report.validation_aligned_rmse = vs.aligned_rmse;
    report.validation_median_rmse = vs.median_rmse;
  }
  return {std::move(trained), std::move(report)};
}

}  // namespace ltto::model
