#pragma once

// Dataset ingestion and persistence.
//
//   - IDX (big-endian magic 0x803/0x801, u8 pixels scaled by 1/255)
//   - CIFAR-10 binary batches (3073-byte records, channel-planar RGB)
//   - deterministic synthetic datasets (blobs, bars) for download-free runs
//   - "XMK1" checkpoints: magic, u32-LE metadata length, text metadata,
//     then raw little-endian f32 parameter arrays in metadata order
//   - "XTB1" flat tensors: magic, u32 dtype width, u32 rank, u32 dims, data
//   - binary PGM (P5, maxval 255, round-half-up)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "xmask/models.hpp"
#include "xmask/rng.hpp"

namespace xmask {

template <typename S>
struct Dataset {
  Tensor<S> images;  // [N, C, H, W] in [0, 1]
  std::vector<int> labels;
  std::string name;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const {
    int m = 0;
    for (int l : labels) m = std::max(m, l);
    return static_cast<std::size_t>(m) + 1;
  }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  Dataset slice(std::size_t begin, std::size_t count) const {
    detail::require(begin + count <= size(), "dataset slice out of range");
    const std::size_t stride = shape_numel(image_shape());
    Shape s = images.shape();
    s[0] = count;
    Dataset out;
    out.images = Tensor<S>(s);
    std::copy(images.data() + begin * stride, images.data() + (begin + count) * stride, out.images.data());
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
    out.name = name;
    out.split = split;
    return out;
  }

  Tensor<S> sample(std::size_t i) const {
    Shape s = image_shape();
    Shape batched;
    batched.push_back(1);
    for (std::size_t d : s) batched.push_back(d);
    const std::size_t stride = shape_numel(s);
    Tensor<S> out(batched);
    std::copy(images.data() + i * stride, images.data() + (i + 1) * stride, out.data());
    return out;
  }
};

namespace io {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  if (!f) throw std::runtime_error("failed to read file: " + path);
  return buf;
}

inline void write_file(const std::string& path, const void* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("failed to write file: " + path);
}

inline std::uint32_t read_u32be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}
inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline void push_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

}  // namespace io

// ---- IDX ----

template <typename S>
Dataset<S> load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = io::read_file(images_path);
  const auto lab = io::read_file(labels_path);
  if (img.size() < 16) throw std::runtime_error("idx: image file truncated before header: " + images_path);
  if (lab.size() < 8) throw std::runtime_error("idx: label file truncated before header: " + labels_path);
  const std::uint32_t img_magic = io::read_u32be(img.data());
  const std::uint32_t lab_magic = io::read_u32be(lab.data());
  if (img_magic != 0x00000803u)
    throw std::runtime_error("idx: bad image magic, expected 0x00000803, got 0x" + [&] {
      char b[16];
      std::snprintf(b, sizeof(b), "%08x", img_magic);
      return std::string(b);
    }());
  if (lab_magic != 0x00000801u)
    throw std::runtime_error("idx: bad label magic, expected 0x00000801, got 0x" + [&] {
      char b[16];
      std::snprintf(b, sizeof(b), "%08x", lab_magic);
      return std::string(b);
    }());
  const std::uint32_t n = io::read_u32be(img.data() + 4);
  const std::uint32_t rows = io::read_u32be(img.data() + 8);
  const std::uint32_t cols = io::read_u32be(img.data() + 12);
  const std::uint32_t nl = io::read_u32be(lab.data() + 4);
  if (n != nl)
    throw std::runtime_error("idx: image/label count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(nl) + " labels");
  const std::size_t expected = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (img.size() != expected)
    throw std::runtime_error("idx: image payload size mismatch, expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(img.size()));
  if (lab.size() != 8 + static_cast<std::size_t>(n))
    throw std::runtime_error("idx: label payload size mismatch, expected " + std::to_string(8 + n) + " bytes, got " +
                             std::to_string(lab.size()));
  Dataset<S> ds;
  ds.images = Tensor<S>({n, 1, rows, cols});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * rows * cols; ++i)
    ds.images[i] = static_cast<S>(img[16 + i]) / S(255);
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(lab[8 + i]);
  ds.name = "idx";
  return ds;
}

// ---- CIFAR-10 binary ----

template <typename S>
Dataset<S> load_cifar10(const std::vector<std::string>& batch_paths) {
  detail::require(!batch_paths.empty(), "cifar10: no batch files given");
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  std::vector<unsigned char> all;
  for (const std::string& p : batch_paths) {
    const auto buf = io::read_file(p);
    if (buf.size() % kRecord != 0)
      throw std::runtime_error("cifar10: file length " + std::to_string(buf.size()) + " of " + p +
                               " is not a multiple of 3073");
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const std::size_t n = all.size() / kRecord;
  Dataset<S> ds;
  ds.images = Tensor<S>({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + i * kRecord;
    if (rec[0] >= 10)
      throw std::runtime_error("cifar10: record " + std::to_string(i) + " has label " + std::to_string(rec[0]) +
                               " >= 10");
    ds.labels[i] = rec[0];
    for (std::size_t p = 0; p < 3072; ++p) ds.images[i * 3072 + p] = static_cast<S>(rec[1 + p]) / S(255);
  }
  ds.name = "cifar10";
  return ds;
}

// ---- synthetic datasets ----

enum class SyntheticKind : std::uint8_t { blobs, bars };

inline SyntheticKind synthetic_kind_from(const std::string& s) {
  if (s == "blobs") return SyntheticKind::blobs;
  if (s == "bars") return SyntheticKind::bars;
  throw std::invalid_argument("synthetic: unknown kind '" + s + "' (expected blobs or bars)");
}

// Separable class-conditional images with deterministic generation and
// round-robin labels (counts uniform within one).
//
// blobs: class c lights three Gaussian petals at ring positions c, c+1, c+2
// of a `classes`-slot ring, so adjacent classes share two petals. The
// overlap gives the dataset MNIST-stroke-like structure: explanations of
// different classes occupy overlapping pixels instead of disjoint spots.
//
// bars: class c lights a horizontal band at a class-specific row range.
template <typename S>
Dataset<S> synthetic_dataset(SyntheticKind kind, std::size_t n, Shape image_shape, std::size_t classes,
                             std::uint64_t seed) {
  detail::require(image_shape.size() == 3, "synthetic: CHW image shape expected");
  detail::require(classes >= 2, "synthetic: need at least 2 classes");
  detail::require(n >= classes, "synthetic: need n >= classes");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  Dataset<S> ds;
  Shape full;
  full.push_back(n);
  for (std::size_t d : image_shape) full.push_back(d);
  ds.images = Tensor<S>(full);
  ds.labels.resize(n);
  ds.name = kind == SyntheticKind::blobs ? "blobs" : "bars";
  Rng rng(seed);
  const double tau = 6.283185307179586;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % classes;
    ds.labels[i] = static_cast<int>(cls);
    S* img = ds.images.data() + i * c * h * w;
    if (kind == SyntheticKind::blobs) {
      const double jy = rng.uniform(-1.0, 1.0);
      const double jx = rng.uniform(-1.0, 1.0);
      const double sigma = h / 10.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double v = 0.0;
          for (std::size_t p = 0; p < 3; ++p) {
            const double ang = tau * static_cast<double>((cls + p) % classes) / static_cast<double>(classes);
            const double cy = h / 2.0 + 0.33 * h * std::sin(ang) + jy;
            const double cx = w / 2.0 + 0.33 * w * std::cos(ang) + jx;
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            v += 0.4 * std::exp(-d2 / (2.0 * sigma * sigma));
          }
          const S px = static_cast<S>(std::min(1.0, v + 0.08 * rng.uniform()));
          for (std::size_t ch = 0; ch < c; ++ch) img[(ch * h + y) * w + x] = px;
        }
    } else {
      const std::size_t band = h / classes;
      const std::size_t y0 = cls * band;
      const std::size_t y1 = std::min(h, y0 + std::max<std::size_t>(1, band / 2 + 1));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const bool lit = y >= y0 && y < y1;
          const S px = static_cast<S>(std::min(1.0, (lit ? 0.9 : 0.0) + 0.08 * rng.uniform()));
          for (std::size_t ch = 0; ch < c; ++ch) img[(ch * h + y) * w + x] = px;
        }
    }
  }
  return ds;
}

// ---- checkpoint ("XMK1") ----

namespace io {

inline std::string layer_line(const LayerSpec& L) {
  std::ostringstream os;
  os << layer_kind_name(L.kind);
  switch (L.kind) {
    case LayerKind::dense: os << " " << L.in_c << " " << L.out_c; break;
    case LayerKind::conv2d:
      os << " " << L.in_c << " " << L.out_c << " " << L.kh << " " << L.kw << " " << L.stride << " " << L.pad;
      break;
    case LayerKind::deconv2d:
      os << " " << L.in_c << " " << L.out_c << " " << L.kh << " " << L.kw << " " << L.stride;
      break;
    case LayerKind::slu: {
      char b[32];
      std::snprintf(b, sizeof(b), "%.17g", L.slu_a);
      os << " " << b;
      break;
    }
    case LayerKind::skip_concat: os << " " << L.skip_from; break;
    default: break;
  }
  return os.str();
}

inline LayerSpec parse_layer_line(const std::string& line) {
  std::istringstream is(line);
  std::string kind;
  is >> kind;
  LayerSpec L{LayerKind::relu};
  if (kind == "dense") {
    L.kind = LayerKind::dense;
    is >> L.in_c >> L.out_c;
  } else if (kind == "conv2d") {
    L.kind = LayerKind::conv2d;
    is >> L.in_c >> L.out_c >> L.kh >> L.kw >> L.stride >> L.pad;
  } else if (kind == "deconv2d") {
    L.kind = LayerKind::deconv2d;
    is >> L.in_c >> L.out_c >> L.kh >> L.kw >> L.stride;
  } else if (kind == "maxpool2d") {
    L.kind = LayerKind::maxpool2d;
  } else if (kind == "relu") {
    L.kind = LayerKind::relu;
  } else if (kind == "slu") {
    L.kind = LayerKind::slu;
    is >> L.slu_a;
  } else if (kind == "sigmoid") {
    L.kind = LayerKind::sigmoid;
  } else if (kind == "flatten") {
    L.kind = LayerKind::flatten;
  } else if (kind == "skip_concat") {
    L.kind = LayerKind::skip_concat;
    is >> L.skip_from;
  } else {
    throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
  }
  if (is.fail()) throw std::runtime_error("checkpoint: malformed layer line '" + line + "'");
  return L;
}

}  // namespace io

template <typename S>
void save_checkpoint(const ModelGraph<S>& model, const std::string& path) {
  std::ostringstream meta;
  meta << "version 1\n";
  meta << "kind " << model.kind() << "\n";
  meta << "float " << (sizeof(S) == 8 ? "f64" : "f32") << "\n";
  meta << "output " << (model.output_kind() == OutputKind::mask ? "mask" : "logits") << "\n";
  meta << "input";
  for (std::size_t d : model.input_shape()) meta << " " << d;
  meta << "\n";
  meta << "layers " << model.layers().size() << "\n";
  for (const LayerSpec& L : model.layers()) meta << "layer " << io::layer_line(L) << "\n";
  std::size_t arrays = 0;
  for (const auto& p : model.params())
    if (p.has()) arrays += 2;
  meta << "arrays " << arrays << "\n";
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& p = model.params()[i];
    if (!p.has()) continue;
    for (const char* which : {"weight", "bias"}) {
      const Tensor<S>& t = std::string(which) == "weight" ? p.weight : p.bias;
      meta << "array " << i << " " << which << " " << t.rank();
      for (std::size_t d : t.shape()) meta << " " << d;
      meta << "\n";
    }
  }
  const std::string meta_str = meta.str();
  std::vector<unsigned char> out;
  out.insert(out.end(), {'X', 'M', 'K', '1'});
  io::push_u32le(out, static_cast<std::uint32_t>(meta_str.size()));
  out.insert(out.end(), meta_str.begin(), meta_str.end());
  for (const auto& p : model.params()) {
    if (!p.has()) continue;
    for (const Tensor<S>* t : {&p.weight, &p.bias}) {
      for (std::size_t j = 0; j < t->numel(); ++j) {
        const float v = static_cast<float>((*t)[j]);
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        io::push_u32le(out, bits);
      }
    }
  }
  io::write_file(path, out.data(), out.size());
}

template <typename S>
ModelGraph<S> load_checkpoint(const std::string& path) {
  const auto buf = io::read_file(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), "XMK1", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path + " (expected XMK1)");
  const std::uint32_t meta_len = io::read_u32le(buf.data() + 4);
  if (buf.size() < 8 + static_cast<std::size_t>(meta_len))
    throw std::runtime_error("checkpoint: truncated metadata, expected " + std::to_string(meta_len) +
                             " bytes, file holds " + std::to_string(buf.size() - 8));
  std::istringstream meta(std::string(reinterpret_cast<const char*>(buf.data() + 8), meta_len));

  std::string line, key;
  int version = 0;
  std::string kind = "custom", float_mode = "f32", output = "logits";
  Shape input_shape;
  std::vector<LayerSpec> layers;
  struct ArrayDesc {
    std::size_t layer;
    std::string which;
    Shape shape;
  };
  std::vector<ArrayDesc> arrays;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    is >> key;
    if (key == "version") {
      is >> version;
      if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    } else if (key == "kind") {
      is >> kind;
    } else if (key == "float") {
      is >> float_mode;
    } else if (key == "output") {
      is >> output;
    } else if (key == "input") {
      std::size_t d;
      while (is >> d) input_shape.push_back(d);
    } else if (key == "layers") {
      std::size_t count;
      is >> count;
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(meta, line)) throw std::runtime_error("checkpoint: metadata ends inside layer list");
        if (line.rfind("layer ", 0) != 0) throw std::runtime_error("checkpoint: expected layer line, got '" + line + "'");
        layers.push_back(io::parse_layer_line(line.substr(6)));
      }
    } else if (key == "arrays") {
      std::size_t count;
      is >> count;
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(meta, line)) throw std::runtime_error("checkpoint: metadata ends inside array list");
        std::istringstream as(line);
        std::string tag;
        ArrayDesc d;
        std::size_t rank;
        as >> tag >> d.layer >> d.which >> rank;
        if (tag != "array" || as.fail()) throw std::runtime_error("checkpoint: malformed array line '" + line + "'");
        for (std::size_t r = 0; r < rank; ++r) {
          std::size_t dim;
          as >> dim;
          d.shape.push_back(dim);
        }
        if (as.fail()) throw std::runtime_error("checkpoint: malformed array dims in '" + line + "'");
        arrays.push_back(std::move(d));
      }
    } else {
      throw std::runtime_error("checkpoint: unknown metadata key '" + key + "'");
    }
  }
  if (version != 1) throw std::runtime_error("checkpoint: missing version line");
  if (arrays.size() % 2 != 0) throw std::runtime_error("checkpoint: array list must pair weight/bias entries");

  std::size_t payload = 0;
  for (const auto& a : arrays) payload += shape_numel(a.shape) * 4;
  if (buf.size() != 8 + meta_len + payload)
    throw std::runtime_error("checkpoint: payload size mismatch, expected " +
                             std::to_string(8 + meta_len + payload) + " bytes total, got " +
                             std::to_string(buf.size()));

  ModelGraph<S> model(input_shape, output == "mask" ? OutputKind::mask : OutputKind::logits, kind);
  for (const LayerSpec& L : layers) model.add(L);

  const unsigned char* p = buf.data() + 8 + meta_len;
  for (const auto& a : arrays) {
    if (a.layer >= layers.size())
      throw std::runtime_error("checkpoint: array references layer " + std::to_string(a.layer) + " of " +
                               std::to_string(layers.size()));
    Tensor<S> t(a.shape);
    for (std::size_t j = 0; j < t.numel(); ++j) {
      const std::uint32_t bits = io::read_u32le(p);
      float v;
      std::memcpy(&v, &bits, 4);
      t[j] = static_cast<S>(v);
      p += 4;
    }
    auto& par = model.params()[a.layer];
    if (a.which == "weight")
      par.weight = std::move(t);
    else if (a.which == "bias")
      par.bias = std::move(t);
    else
      throw std::runtime_error("checkpoint: unknown array tag '" + a.which + "'");
  }
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerKind k = model.layers()[i].kind;
    const bool needs = k == LayerKind::dense || k == LayerKind::conv2d || k == LayerKind::deconv2d;
    if (needs && !model.params()[i].has())
      throw std::runtime_error("checkpoint: layer " + std::to_string(i) + " (" + layer_kind_name(k) +
                               ") is missing its parameter arrays");
  }
  return model;
}

// ---- flat tensor ("XTB1") ----

template <typename S>
void save_tensor(const Tensor<S>& t, const std::string& path) {
  std::vector<unsigned char> out;
  out.insert(out.end(), {'X', 'T', 'B', '1'});
  io::push_u32le(out, sizeof(S) == 8 ? 8 : 4);
  io::push_u32le(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) io::push_u32le(out, static_cast<std::uint32_t>(d));
  const std::size_t base = out.size();
  out.resize(base + t.numel() * sizeof(S));
  std::memcpy(out.data() + base, t.data(), t.numel() * sizeof(S));
  io::write_file(path, out.data(), out.size());
}

template <typename S>
Tensor<S> load_tensor(const std::string& path) {
  const auto buf = io::read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "XTB1", 4) != 0)
    throw std::runtime_error("tensor: bad magic in " + path + " (expected XTB1)");
  const std::uint32_t width = io::read_u32le(buf.data() + 4);
  if (width != 4 && width != 8) throw std::runtime_error("tensor: unsupported scalar width " + std::to_string(width));
  const std::uint32_t rank = io::read_u32le(buf.data() + 8);
  if (buf.size() < 12 + 4 * static_cast<std::size_t>(rank)) throw std::runtime_error("tensor: truncated dims in " + path);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = io::read_u32le(buf.data() + 12 + 4 * i);
  const std::size_t n = shape_numel(shape);
  const std::size_t expected = 12 + 4 * rank + n * width;
  if (buf.size() != expected)
    throw std::runtime_error("tensor: payload size mismatch in " + path + ", expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(buf.size()));
  Tensor<S> t(shape);
  const unsigned char* p = buf.data() + 12 + 4 * rank;
  if (width == 4) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      t[i] = static_cast<S>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, p + 8 * i, 8);
      t[i] = static_cast<S>(v);
    }
  }
  return t;
}

// ---- PGM (P5) ----

// round-half-up byte quantization of a 2-D tensor in [0,1].
template <typename S>
void export_pgm(const Tensor<S>& t, const std::string& path) {
  detail::require(t.rank() == 2, "pgm: 2-D tensor expected, got " + shape_str(t.shape()));
  const std::size_t h = t.dim(0), w = t.dim(1);
  for (std::size_t i = 0; i < t.numel(); ++i)
    detail::require(t[i] >= S(0) && t[i] <= S(1),
                    "pgm: value " + std::to_string(static_cast<double>(t[i])) + " out of [0,1]");
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (std::size_t i = 0; i < t.numel(); ++i)
    out.push_back(static_cast<unsigned char>(std::floor(static_cast<double>(t[i]) * 255.0 + 0.5)));
  io::write_file(path, out.data(), out.size());
}

}  // namespace xmask
