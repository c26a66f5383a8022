#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "pgrad/data.hpp"

using namespace pgrad;

namespace {

void write_u32_be(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

void write_idx_images(const std::string& path, const std::vector<std::vector<unsigned char>>& images,
                      std::uint32_t magic = 0x00000803u, std::uint32_t rows = 28, std::uint32_t cols = 28,
                      bool truncate = false) {
  std::ofstream f(path, std::ios::binary);
  write_u32_be(f, magic);
  write_u32_be(f, static_cast<std::uint32_t>(images.size()));
  write_u32_be(f, rows);
  write_u32_be(f, cols);
  for (const auto& img : images) {
    f.write(reinterpret_cast<const char*>(img.data()),
            truncate ? static_cast<std::streamsize>(img.size() - 1) : static_cast<std::streamsize>(img.size()));
  }
}

void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels,
                      std::uint32_t magic = 0x00000801u) {
  std::ofstream f(path, std::ios::binary);
  write_u32_be(f, magic);
  write_u32_be(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace

TEST_CASE("toy label rule") {
  CHECK(toy_label_is_one(0.5, 0.95));
  CHECK_FALSE(toy_label_is_one(-0.5, 0.95));
  CHECK_FALSE(toy_label_is_one(0.97, 0.95));
  CHECK(toy_label_is_one(0.0, 0.95));
  CHECK(toy_label_is_one(0.95, 0.95));
}

TEST_CASE("gen_toy") {
  SECTION("labels obey the rule and features are in range") {
    Rng rng(3);
    const Dataset ds = gen_toy(5000, 0.8, rng);
    CHECK(ds.n_classes == 2);
    CHECK(ds.feature_dim == 1);
    for (const Example& e : ds.examples) {
      const double x = e.features[0];
      CHECK(x > -1.0);
      CHECK(x < 1.0);
      CHECK(e.label == (toy_label_is_one(x, 0.8) ? 1u : 0u));
    }
  }
  SECTION("class-1 fraction approaches alpha/2") {
    for (std::uint64_t seed : {1u, 77u, 394u}) {
      Rng rng(seed);
      const Dataset ds = gen_toy(30000, 0.95, rng);
      std::size_t ones = 0;
      for (const Example& e : ds.examples) ones += e.label;
      const double frac = static_cast<double>(ones) / 30000.0;
      CHECK(std::fabs(frac - 0.475) <= 0.02);
    }
  }
  SECTION("deterministic given seed") {
    Rng a(9), b(9);
    const Dataset d1 = gen_toy(100, 0.9, a);
    const Dataset d2 = gen_toy(100, 0.9, b);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(d1.examples[i].features == d2.examples[i].features);
      CHECK(d1.examples[i].label == d2.examples[i].label);
    }
  }
  SECTION("config errors") {
    Rng rng(1);
    CHECK_THROWS_AS(gen_toy(10, 0.4, rng), InvalidConfigError);
    CHECK_THROWS_AS(gen_toy(10, 1.0, rng), InvalidConfigError);
    CHECK_THROWS_AS(gen_toy(0, 0.9, rng), InvalidInputError);
  }
}

TEST_CASE("scale_features") {
  Dataset ds;
  ds.n_classes = 2;
  ds.feature_dim = 3;
  ds.examples = {{{0.0, 255.0, 127.5}, 0}};
  const Dataset s = scale_features(ds, 0.0, 255.0);
  CHECK(s.examples[0].features[0] == -1.0);
  CHECK(s.examples[0].features[1] == 1.0);
  CHECK(s.examples[0].features[2] == 0.0);

  SECTION("inverse map recovers inputs") {
    Rng rng(4);
    Dataset r;
    r.n_classes = 2;
    r.feature_dim = 5;
    r.examples.resize(50);
    for (auto& e : r.examples) {
      e.features.resize(5);
      for (double& v : e.features) v = rng.uniform(-3.0, 17.0);
    }
    const Dataset scaled = scale_features(r, -3.0, 17.0);
    for (std::size_t i = 0; i < r.examples.size(); ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const double back = -3.0 + (scaled.examples[i].features[j] + 1.0) * 0.5 * 20.0;
        CHECK(std::fabs(back - r.examples[i].features[j]) <= 1e-12);
      }
    }
  }
  SECTION("idempotent on [-1,1] within tolerance") {
    Dataset r;
    r.n_classes = 2;
    r.feature_dim = 1;
    r.examples = {{{-1.0}, 0}, {{1.0}, 0}, {{0.25}, 0}, {{1e-17}, 0}};
    const Dataset s2 = scale_features(r, -1.0, 1.0);
    for (std::size_t i = 0; i < r.examples.size(); ++i) {
      CHECK(std::fabs(s2.examples[i].features[0] - r.examples[i].features[0]) <= 1e-12);
    }
  }
  SECTION("degenerate range") {
    Dataset r;
    CHECK_THROWS_AS(scale_features(r, 1.0, 1.0), InvalidConfigError);
  }
}

TEST_CASE("idx loader") {
  std::vector<std::vector<unsigned char>> images(3, std::vector<unsigned char>(784, 0));
  images[0][0] = 0;
  images[0][1] = 255;
  images[1][100] = 128;
  const std::vector<unsigned char> labels{7, 0, 9};

  TempFile img("idx_img_test.bin"), lab("idx_lab_test.bin");

  SECTION("parses and scales") {
    write_idx_images(img.path, images);
    write_idx_labels(lab.path, labels);
    const Dataset ds = load_mnist_idx(img.path, lab.path);
    REQUIRE(ds.size() == 3);
    CHECK(ds.n_classes == 10);
    CHECK(ds.feature_dim == 784);
    CHECK(ds.examples[0].label == 7);
    CHECK(ds.examples[0].features[0] == 0.0);
    CHECK(ds.examples[0].features[1] == 255.0);
    const Dataset scaled = scale_features(ds, 0.0, 255.0);
    CHECK(scaled.examples[0].features[0] == -1.0);
    CHECK(scaled.examples[0].features[1] == 1.0);
  }
  SECTION("bad image magic") {
    write_idx_images(img.path, images, 0x00000804u);
    write_idx_labels(lab.path, labels);
    CHECK_THROWS_WITH(load_mnist_idx(img.path, lab.path), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("bad label magic") {
    write_idx_images(img.path, images);
    write_idx_labels(lab.path, labels, 0x00000803u);
    CHECK_THROWS_WITH(load_mnist_idx(img.path, lab.path), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("count mismatch") {
    write_idx_images(img.path, images);
    write_idx_labels(lab.path, {7, 0});
    CHECK_THROWS_WITH(load_mnist_idx(img.path, lab.path),
                      Catch::Matchers::ContainsSubstring("count mismatch"));
  }
  SECTION("truncated image data") {
    write_idx_images(img.path, images, 0x00000803u, 28, 28, /*truncate=*/true);
    write_idx_labels(lab.path, labels);
    CHECK_THROWS_WITH(load_mnist_idx(img.path, lab.path),
                      Catch::Matchers::ContainsSubstring("data size"));
  }
  SECTION("unexpected geometry") {
    write_idx_images(img.path, images, 0x00000803u, 28, 14);
    write_idx_labels(lab.path, labels);
    CHECK_THROWS_AS(load_mnist_idx(img.path, lab.path), FormatError);
  }
}

TEST_CASE("cifar10 loader") {
  TempFile batch("cifar_batch_test.bin");

  SECTION("parses records") {
    std::ofstream f(batch.path, std::ios::binary);
    for (unsigned rec = 0; rec < 2; ++rec) {
      const unsigned char label = rec == 0 ? 3 : 9;
      f.put(static_cast<char>(label));
      for (int i = 0; i < 3072; ++i) f.put(static_cast<char>((i + rec) % 256));
    }
    f.close();
    const Dataset ds = load_cifar10({batch.path});
    REQUIRE(ds.size() == 2);
    CHECK(ds.feature_dim == 3072);
    CHECK(ds.examples[0].label == 3);
    CHECK(ds.examples[1].label == 9);
    CHECK(ds.examples[0].features[0] == 0.0);
    CHECK(ds.examples[1].features[0] == 1.0);
  }
  SECTION("bad framing") {
    std::ofstream f(batch.path, std::ios::binary);
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(i % 256));  // one byte short
    f.close();
    CHECK_THROWS_AS(load_cifar10({batch.path}), FormatError);
  }
  SECTION("label out of range") {
    std::ofstream f(batch.path, std::ios::binary);
    f.put(static_cast<char>(11));
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(0));
    f.close();
    CHECK_THROWS_AS(load_cifar10({batch.path}), FormatError);
  }
}

TEST_CASE("split_folds") {
  Dataset ds;
  ds.n_classes = 2;
  ds.feature_dim = 1;

  SECTION("size 100 gives five folds of 20 covering everything") {
    ds.examples.assign(100, Example{{0.0}, 0});
    Rng rng(5);
    const FoldSplit s = split_folds(ds, rng);
    std::set<std::size_t> seen;
    for (const auto& fold : s.folds) {
      CHECK(fold.size() == 20);
      seen.insert(fold.begin(), fold.end());
    }
    CHECK(seen.size() == 100);
  }
  SECTION("size 101 gives sizes {21,20,20,20,20}") {
    ds.examples.assign(101, Example{{0.0}, 0});
    Rng rng(5);
    const FoldSplit s = split_folds(ds, rng);
    CHECK(s.folds[0].size() == 21);
    for (std::size_t f = 1; f < 5; ++f) CHECK(s.folds[f].size() == 20);
  }
  SECTION("deterministic given seed") {
    ds.examples.assign(53, Example{{0.0}, 0});
    Rng a(11), b(11);
    const FoldSplit s1 = split_folds(ds, a);
    const FoldSplit s2 = split_folds(ds, b);
    CHECK(s1.folds == s2.folds);
  }
  SECTION("too small") {
    ds.examples.assign(4, Example{{0.0}, 0});
    Rng rng(1);
    CHECK_THROWS_AS(split_folds(ds, rng), InvalidInputError);
  }
}

TEST_CASE("rotate_roles") {
  FoldSplit s;
  for (std::size_t f = 0; f < 5; ++f) s.folds[f] = {f};  // fold f holds index f

  SECTION("round 0") {
    const FoldRoles r = rotate_roles(s, 0);
    CHECK(r.train == std::vector<std::size_t>{0, 1, 2});
    CHECK(r.early_stop == std::vector<std::size_t>{3});
    CHECK(r.validation == std::vector<std::size_t>{4});
  }
  SECTION("round 1") {
    const FoldRoles r = rotate_roles(s, 1);
    CHECK(r.train == std::vector<std::size_t>{1, 2, 3});
    CHECK(r.early_stop == std::vector<std::size_t>{4});
    CHECK(r.validation == std::vector<std::size_t>{0});
  }
  SECTION("periodicity: round 5 equals round 0") {
    const FoldRoles a = rotate_roles(s, 5);
    const FoldRoles b = rotate_roles(s, 0);
    CHECK(a.train == b.train);
    CHECK(a.early_stop == b.early_stop);
    CHECK(a.validation == b.validation);
  }
  SECTION("each fold takes each role exactly once over five rounds") {
    std::set<std::size_t> es, val;
    std::vector<int> trained(5, 0);
    for (std::size_t t = 0; t < 5; ++t) {
      const FoldRoles r = rotate_roles(s, t);
      es.insert(r.early_stop[0]);
      val.insert(r.validation[0]);
      for (std::size_t i : r.train) ++trained[i];
    }
    CHECK(es.size() == 5);
    CHECK(val.size() == 5);
    for (int c : trained) CHECK(c == 3);
  }
}
