#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "rdcr/cifar.hpp"

using namespace rdcr;
namespace cf = rdcr::cifar;

namespace {

// deterministic but non-trivial pixel pattern
cf::RawFile fixture(int n, cf::Variant v) {
  cf::RawFile raw;
  raw.labels.resize(static_cast<size_t>(n));
  raw.pixels.resize(static_cast<size_t>(n) * 3072);
  if (v == cf::Variant::cifar100) raw.coarse.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    raw.labels[static_cast<size_t>(i)] = (3 * i + 1) % (v == cf::Variant::cifar10 ? 10 : 100);
    if (v == cf::Variant::cifar100)
      raw.coarse[static_cast<size_t>(i)] = static_cast<uint8_t>(i % 20);
    for (int p = 0; p < 3072; ++p)
      raw.pixels[static_cast<size_t>(i) * 3072 + static_cast<size_t>(p)] =
          static_cast<uint8_t>((i * 37 + p * 11 + p / 64) % 256);
  }
  return raw;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("raw file round-trips bit-exactly") {
  for (cf::Variant v : {cf::Variant::cifar10, cf::Variant::cifar100}) {
    cf::RawFile raw = fixture(2, v);
    const std::string a = "cifar_fixture_a.bin";
    const std::string b = "cifar_fixture_b.bin";
    cf::write_file(a, raw, v);
    cf::RawFile back = cf::read_file(a, v);
    CHECK(back.labels == raw.labels);
    CHECK(back.pixels == raw.pixels);
    CHECK(back.coarse == raw.coarse);
    cf::write_file(b, back, v);
    CHECK(slurp(a) == slurp(b));
    std::remove(a.c_str());
    std::remove(b.c_str());
  }
}

TEST_CASE("malformed files are rejected") {
  const std::string path = "cifar_bad.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "xyz";  // not a whole record
  }
  CHECK_THROWS_AS(cf::read_file(path, cf::Variant::cifar10), IoError);

  {
    // one record with an out-of-range label
    std::vector<char> rec(3073, 0);
    rec[0] = 11;
    std::ofstream f(path, std::ios::binary);
    f.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  CHECK_THROWS_AS(cf::read_file(path, cf::Variant::cifar10), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(cf::read_file("no_such_dir/x.bin", cf::Variant::cifar10), IoError);
}

TEST_CASE("loading standardizes and re-encoding inverts") {
  cf::RawFile train = fixture(4, cf::Variant::cifar10);
  cf::RawFile test = fixture(2, cf::Variant::cifar10);
  const std::string tr = "cifar_train.bin";
  const std::string te = "cifar_test.bin";
  cf::write_file(tr, train, cf::Variant::cifar10);
  cf::write_file(te, test, cf::Variant::cifar10);

  cf::Loaded got = cf::load_files({tr}, te, cf::Variant::cifar10);
  CHECK(got.train->count() == 4);
  CHECK(got.test->count() == 2);
  CHECK(got.train->K == 10);
  CHECK(got.train->channels == 3);
  CHECK(got.train->size == 32);
  CHECK(got.train->labels == train.labels);

  // per-channel standardization: the training split is exactly zero-mean,
  // unit-variance under its own constants
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n) {
      const double* img = got.train->image(n);
      for (int p = 0; p < 1024; ++p) {
        sum += img[c * 1024 + p];
        sq += img[c * 1024 + p] * img[c * 1024 + p];
      }
    }
    CHECK(sum / 4096.0 == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(sq / 4096.0 == doctest::Approx(1.0).epsilon(1e-9));
  }

  // inverse standardization recovers the original bytes of both splits
  for (int n = 0; n < 4; ++n) {
    std::vector<uint8_t> bytes =
        cf::reencode_pixels(*got.train, n, got.mean, got.stddev);
    CHECK(std::equal(bytes.begin(), bytes.end(),
                     train.pixels.begin() + static_cast<size_t>(n) * 3072));
  }
  for (int n = 0; n < 2; ++n) {
    std::vector<uint8_t> bytes =
        cf::reencode_pixels(*got.test, n, got.mean, got.stddev);
    CHECK(std::equal(bytes.begin(), bytes.end(),
                     test.pixels.begin() + static_cast<size_t>(n) * 3072));
  }

  std::remove(tr.c_str());
  std::remove(te.c_str());
}

TEST_CASE("cifar100 keeps coarse labels alongside fine") {
  cf::RawFile train = fixture(3, cf::Variant::cifar100);
  cf::RawFile test = fixture(1, cf::Variant::cifar100);
  const std::string tr = "cifar100_train.bin";
  const std::string te = "cifar100_test.bin";
  cf::write_file(tr, train, cf::Variant::cifar100);
  cf::write_file(te, test, cf::Variant::cifar100);

  cf::Loaded got = cf::load_files({tr}, te, cf::Variant::cifar100);
  CHECK(got.train->K == 100);
  CHECK(got.train_coarse == train.coarse);
  CHECK(got.test_coarse == test.coarse);

  std::remove(tr.c_str());
  std::remove(te.c_str());
}
