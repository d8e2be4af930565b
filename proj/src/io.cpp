// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

#include "ltto/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ltto::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("tensor file: truncated record");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out = {'L', 'T', 'T', 'O'};
  put<std::uint32_t>(out, kTensorFileVersion);
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

NamedTensors decode_tensors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "LTTO", 4) != 0) {
    throw FormatError("tensor file: missing LTTO magic");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw FormatError("tensor file: unsupported version " + std::to_string(version));
  }
  NamedTensors out;
  while (!r.done()) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.get_string(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("tensor file: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("tensor file: tensor '" + name + "' too large");
    std::vector<double> data(n);
    for (double& v : data) v = r.get<double>();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_bytes(path, encode_tensors(tensors));
}

NamedTensors read_tensor_file(const std::filesystem::path& path) {
  return decode_tensors(read_bytes(path));
}

std::vector<std::uint8_t> encode_pfm(const Tensor& map) {
  std::size_t h = 0, w = 0, c = 0;
  if (map.rank() == 2) {
    h = map.dim(0);
    w = map.dim(1);
    c = 1;
  } else if (map.rank() == 3 && map.dim(2) == 3) {
    h = map.dim(0);
    w = map.dim(1);
    c = 3;
  } else {
    throw FormatError("pfm: expected H×W or H×W×3, got " + shape_str(map.shape()));
  }
  const std::string header =
      std::string(c == 1 ? "Pf" : "PF") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + h * w * c * 4);
  for (std::size_t row = h; row-- > 0;) {
    for (std::size_t i = row * w * c; i < (row + 1) * w * c; ++i) {
      put<float>(out, static_cast<float>(map[i]));
    }
  }
  return out;
}

Tensor decode_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw FormatError("pfm: truncated header");
    return std::string(reinterpret_cast<const char*>(bytes.data() + start), pos - start);
  };
  const std::string magic = token();
  std::size_t c = 0;
  if (magic == "Pf") {
    c = 1;
  } else if (magic == "PF") {
    c = 3;
  } else {
    throw FormatError("pfm: bad magic '" + magic + "'");
  }
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw FormatError("pfm: malformed header");
  }
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = w * h * c;
  if (scale == 0.0 || bytes.size() < pos + n * 4) throw FormatError("pfm: truncated raster");
  const bool little = scale < 0.0;

  Tensor out = c == 1 ? Tensor({h, w}) : Tensor({h, w, 3});
  std::size_t k = pos;
  for (std::size_t row = h; row-- > 0;) {
    for (std::size_t i = row * w * c; i < (row + 1) * w * c; ++i) {
      std::uint8_t raw[4];
      std::memcpy(raw, bytes.data() + k, 4);
      if (!little) std::swap(raw[0], raw[3]), std::swap(raw[1], raw[2]);
      float f;
      std::memcpy(&f, raw, 4);
      out[i] = f;
      k += 4;
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
  write_bytes(path, encode_pfm(map));
}

Tensor read_pfm(const std::filesystem::path& path) { return decode_pfm(read_bytes(path)); }

void write_observations_csv(const std::filesystem::path& path,
                            const world::SparseObservation& obs) {
  std::ostringstream os;
  os << "row,col,value\n";
  for (std::size_t k = 0; k < obs.size(); ++k) {
    os << obs.omega[k].row << ',' << obs.omega[k].col << ',' << format_double(obs.values[k])
       << '\n';
  }
  write_text(path, os.str());
}

world::SparseObservation read_observations_csv(const std::filesystem::path& path,
                                               std::size_t width) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "row,col,value") {
    throw FormatError(path.string() + ": expected header 'row,col,value'");
  }
  world::SparseObservation obs;
  obs.width = width;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string r, c, v;
    if (!std::getline(ls, r, ',') || !std::getline(ls, c, ',') || !std::getline(ls, v)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    try {
      obs.omega.push_back({static_cast<std::uint32_t>(std::stoul(r)),
                           static_cast<std::uint32_t>(std::stoul(c))});
      obs.values.push_back(std::stod(v));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return obs;
}

NamedTensors scene_bundle(const world::SceneSample& scene, const world::SparseObservation& obs) {
  Tensor omega({obs.size(), 2});
  for (std::size_t i = 0; i < obs.size(); ++i) {
    omega[2 * i] = obs.omega[i].row;
    omega[2 * i + 1] = obs.omega[i].col;
  }
  // Seeds are split into 32-bit halves so they survive the trip through doubles.
  auto halves = [](std::uint64_t v) {
    return std::vector<double>{static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffu)};
  };
  const auto ss = halves(scene.seed), os = halves(obs.seed);
  return {{"image", scene.image},
          {"depth", scene.depth},
          {"omega", omega},
          {"values", Tensor::vector(obs.values)},
          {"sensor", Tensor::vector({obs.sensor_scale, obs.sensor_shift, obs.noise_sigma})},
          {"meta", Tensor::vector({static_cast<double>(scene.kind), ss[0], ss[1], os[0], os[1],
                                   static_cast<double>(obs.width)})}};
}

std::pair<world::SceneSample, world::SparseObservation> read_scene_bundle(const NamedTensors& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw FormatError("scene bundle: missing tensor '" + name + "'");
  };
  const Tensor& meta = find("meta");
  const Tensor& sensor = find("sensor");
  const Tensor& omega = find("omega");
  const Tensor& values = find("values");
  if (meta.numel() != 6 || sensor.numel() != 3 || omega.rank() != 2 || omega.dim(1) != 2 ||
      omega.dim(0) != values.numel()) {
    throw FormatError("scene bundle: malformed observation tensors");
  }
  auto join = [](double hi, double lo) {
    return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
  };
  world::SceneSample scene;
  scene.image = find("image");
  scene.depth = find("depth");
  scene.kind = static_cast<world::SceneKind>(static_cast<int>(meta[0]));
  scene.seed = join(meta[1], meta[2]);
  world::SparseObservation obs;
  obs.seed = join(meta[3], meta[4]);
  obs.width = static_cast<std::size_t>(meta[5]);
  obs.sensor_scale = sensor[0];
  obs.sensor_shift = sensor[1];
  obs.noise_sigma = sensor[2];
  obs.values.assign(values.storage().begin(), values.storage().end());
  for (std::size_t i = 0; i < omega.dim(0); ++i) {
    obs.omega.push_back({static_cast<std::uint32_t>(omega[2 * i]), static_cast<std::uint32_t>(omega[2 * i + 1])});
  }
  return {std::move(scene), std::move(obs)};
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

}  // namespace ltto::io
