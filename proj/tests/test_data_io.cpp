#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "xmask/data_io.hpp"
#include "xmask/train.hpp"

using namespace xmask;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("xmask_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void push_u32be(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, unsigned char fill) {
  std::vector<unsigned char> v;
  push_u32be(v, 0x00000803);
  push_u32be(v, n);
  push_u32be(v, rows);
  push_u32be(v, cols);
  v.insert(v.end(), std::size_t(n) * rows * cols, fill);
  return v;
}

std::vector<unsigned char> idx_labels(std::uint32_t n, unsigned char fill) {
  std::vector<unsigned char> v;
  push_u32be(v, 0x00000801);
  push_u32be(v, n);
  v.insert(v.end(), n, fill);
  return v;
}

}  // namespace

TEST_CASE("idx loader parses the documented fixture") {
  TempDir td;
  auto img = idx_images(2, 28, 28, 255);
  auto lab = idx_labels(2, 3);
  CHECK(img.size() == 16 + 1568);
  io::write_file(td.file("img"), img.data(), img.size());
  io::write_file(td.file("lab"), lab.data(), lab.size());
  Dataset<float> ds = load_idx<float>(td.file("img"), td.file("lab"));
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 1, 28, 28});
  CHECK(ds.images[0] == 1.0f);  // byte 255 scales to exactly 1.0
  CHECK(ds.labels[0] == 3);
}

TEST_CASE("idx loader rejects a label magic on the image path") {
  TempDir td;
  auto img = idx_labels(2, 0);  // wrong magic for images
  auto lab = idx_labels(2, 0);
  io::write_file(td.file("img"), img.data(), img.size());
  io::write_file(td.file("lab"), lab.data(), lab.size());
  try {
    (void)load_idx<float>(td.file("img"), td.file("lab"));
    FAIL("expected bad-magic error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
}

TEST_CASE("idx loader rejects count mismatches and truncation") {
  TempDir td;
  auto img = idx_images(2, 4, 4, 0);
  auto lab = idx_labels(3, 0);
  io::write_file(td.file("img"), img.data(), img.size());
  io::write_file(td.file("lab"), lab.data(), lab.size());
  CHECK_THROWS_AS((void)load_idx<float>(td.file("img"), td.file("lab")), std::runtime_error);

  auto lab2 = idx_labels(2, 0);
  img.pop_back();  // truncate one pixel
  io::write_file(td.file("img2"), img.data(), img.size());
  io::write_file(td.file("lab2"), lab2.data(), lab2.size());
  CHECK_THROWS_AS((void)load_idx<float>(td.file("img2"), td.file("lab2")), std::runtime_error);
}

TEST_CASE("cifar10 loader parses single records and validates structure") {
  TempDir td;
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 7;
  io::write_file(td.file("batch"), rec.data(), rec.size());
  Dataset<float> ds = load_cifar10<float>({td.file("batch")});
  CHECK(ds.size() == 1);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
  CHECK(max_value(ds.images) == 0.0f);  // all-zero pixels stay zero

  std::vector<unsigned char> bad(3072, 0);
  io::write_file(td.file("short"), bad.data(), bad.size());
  CHECK_THROWS_AS((void)load_cifar10<float>({td.file("short")}), std::runtime_error);

  rec[0] = 12;  // label out of range
  io::write_file(td.file("badlabel"), rec.data(), rec.size());
  CHECK_THROWS_AS((void)load_cifar10<float>({td.file("badlabel")}), std::runtime_error);
}

TEST_CASE("synthetic datasets are deterministic with near-uniform labels") {
  auto a = synthetic_dataset<float>(SyntheticKind::blobs, 103, {1, 28, 28}, 10, 5);
  auto b = synthetic_dataset<float>(SyntheticKind::blobs, 103, {1, 28, 28}, 10, 5);
  CHECK(bitwise_equal(a.images, b.images));
  CHECK(a.labels == b.labels);
  CHECK(min_value(a.images) >= 0.0f);
  CHECK(max_value(a.images) <= 1.0f);

  std::vector<int> counts(10, 0);
  for (int l : a.labels) counts[std::size_t(l)]++;
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*hi - *lo <= 1);

  auto bars = synthetic_dataset<float>(SyntheticKind::bars, 40, {3, 32, 32}, 10, 2);
  CHECK(bars.images.shape() == Shape{40, 3, 32, 32});
  CHECK_THROWS_AS((void)synthetic_dataset<float>(SyntheticKind::blobs, 5, {1, 28, 28}, 10, 1), std::invalid_argument);
}

TEST_CASE("a small mlp separates blobs quickly") {
  auto data = synthetic_dataset<float>(SyntheticKind::blobs, 500, {1, 28, 28}, 10, 9);
  Rng rng(1);
  auto mlp = build_mlp<float>({1, 28, 28}, {64}, 10, rng);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 0.1;
  train_classifier(mlp, data, cfg);
  CHECK(evaluate_accuracy(mlp, data.images, data.labels) >= 0.9);
}

TEST_CASE("checkpoint round trip is bitwise on parameters and structure") {
  TempDir td;
  Rng rng(11);
  auto model = build_xunet<float>({1, 8, 8}, rng);
  const std::uint64_t hash = model.param_hash();
  save_checkpoint(model, td.file("m.xmk"));
  auto loaded = load_checkpoint<float>(td.file("m.xmk"));
  CHECK(loaded.param_hash() == hash);
  CHECK(loaded.layers().size() == model.layers().size());
  CHECK(loaded.kind() == "xunet");
  CHECK(loaded.input_shape() == model.input_shape());
  CHECK(loaded.output_kind() == OutputKind::mask);
  // loaded model computes identically
  Tensor<float> x = rng_uniform<float>(rng, {1, 1, 8, 8});
  CHECK(bitwise_equal(model.forward(x), loaded.forward(x)));
}

TEST_CASE("checkpoint loader rejects corruption with precise diagnostics") {
  TempDir td;
  Rng rng(12);
  auto model = build_mlp<float>({1, 4, 4}, {8}, 3, rng);
  save_checkpoint(model, td.file("m.xmk"));
  auto bytes = io::read_file(td.file("m.xmk"));

  SUBCASE("bad magic") {
    bytes[0] = 'Y';
    io::write_file(td.file("bad"), bytes.data(), bytes.size());
    try {
      (void)load_checkpoint<float>(td.file("bad"));
      FAIL("expected magic error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
  SUBCASE("truncated payload names expected and actual sizes") {
    bytes.resize(bytes.size() - 5);
    io::write_file(td.file("trunc"), bytes.data(), bytes.size());
    try {
      (void)load_checkpoint<float>(td.file("trunc"));
      FAIL("expected truncation error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("expected") != std::string::npos);
      CHECK(msg.find(std::to_string(bytes.size())) != std::string::npos);
    }
  }
  SUBCASE("version mismatch") {
    // metadata begins after magic+length; flip the version digit
    const std::size_t pos = 8 + std::string("version ").size();
    bytes[pos] = '9';
    io::write_file(td.file("ver"), bytes.data(), bytes.size());
    CHECK_THROWS_AS((void)load_checkpoint<float>(td.file("ver")), std::runtime_error);
  }
}

TEST_CASE("checkpoint rejects metadata whose array list disagrees with the layers") {
  TempDir td;
  Rng rng(13);
  auto model = build_mlp<float>({1, 4, 4}, {8}, 3, rng);
  save_checkpoint(model, td.file("m.xmk"));
  auto bytes = io::read_file(td.file("m.xmk"));
  // rewrite metadata: claim zero arrays but keep the payload
  const std::uint32_t meta_len = io::read_u32le(bytes.data() + 4);
  std::string meta(reinterpret_cast<char*>(bytes.data() + 8), meta_len);
  const auto pos = meta.find("arrays 4");
  REQUIRE(pos != std::string::npos);
  meta.replace(pos, 8, "arrays 0");
  const auto cut = meta.find("array ");
  meta.resize(cut);  // drop the array lines
  std::vector<unsigned char> rebuilt(bytes.begin() + 8 + meta_len, bytes.end());
  std::vector<unsigned char> out = {'X', 'M', 'K', '1'};
  io::push_u32le(out, std::uint32_t(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  out.insert(out.end(), rebuilt.begin(), rebuilt.end());
  io::write_file(td.file("mismatch"), out.data(), out.size());
  CHECK_THROWS_AS((void)load_checkpoint<float>(td.file("mismatch")), std::runtime_error);
}

TEST_CASE("pgm bytes match the declared format exactly") {
  TempDir td;
  export_pgm(Tensor<float>::zeros({2, 2}), td.file("z.pgm"));
  const auto bytes = io::read_file(td.file("z.pgm"));
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 0);

  export_pgm(Tensor<float>({1, 2}, {1.0f, 0.5f}), td.file("v.pgm"));
  const auto vb = io::read_file(td.file("v.pgm"));
  CHECK(vb[vb.size() - 2] == 255);  // 1.0 -> 255
  CHECK(vb[vb.size() - 1] == 128);  // 0.5 -> 128, round half up

  CHECK_THROWS_AS(export_pgm(Tensor<float>({1, 1}, {1.5f}), td.file("bad.pgm")), std::invalid_argument);
}

TEST_CASE("flat tensor round trip preserves shape and bits") {
  TempDir td;
  Rng rng(14);
  Tensor<float> t = rng_uniform<float>(rng, {3, 2, 5});
  save_tensor(t, td.file("t.xtb"));
  Tensor<float> u = load_tensor<float>(td.file("t.xtb"));
  CHECK(bitwise_equal(t, u));

  Tensor<double> d = rng_uniform<double>(rng, {7});
  save_tensor(d, td.file("d.xtb"));
  CHECK(bitwise_equal(load_tensor<double>(td.file("d.xtb")), d));

  auto bytes = io::read_file(td.file("t.xtb"));
  bytes.resize(bytes.size() - 1);
  io::write_file(td.file("trunc.xtb"), bytes.data(), bytes.size());
  CHECK_THROWS_AS((void)load_tensor<float>(td.file("trunc.xtb")), std::runtime_error);
}

TEST_CASE("fuzzed valid loader inputs keep dataset invariants") {
  TempDir td;
  Rng rng(15);
  for (int trial = 0; trial < 8; ++trial) {
    const std::uint32_t n = 1 + rng.below(5);
    const std::uint32_t side = 2 + rng.below(6);
    std::vector<unsigned char> img;
    push_u32be(img, 0x00000803);
    push_u32be(img, n);
    push_u32be(img, side);
    push_u32be(img, side);
    for (std::uint32_t i = 0; i < n * side * side; ++i) img.push_back(static_cast<unsigned char>(rng.below(256)));
    std::vector<unsigned char> lab;
    push_u32be(lab, 0x00000801);
    push_u32be(lab, n);
    for (std::uint32_t i = 0; i < n; ++i) lab.push_back(static_cast<unsigned char>(rng.below(10)));
    io::write_file(td.file("fi"), img.data(), img.size());
    io::write_file(td.file("fl"), lab.data(), lab.size());
    Dataset<float> ds = load_idx<float>(td.file("fi"), td.file("fl"));
    CHECK(ds.size() == n);
    CHECK(ds.images.numel() == std::size_t(n) * side * side);
    CHECK(min_value(ds.images) >= 0.0f);
    CHECK(max_value(ds.images) <= 1.0f);
    CHECK(ds.images.all_finite());
  }
}
