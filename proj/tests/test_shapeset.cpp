#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <vector>

#include "rdcr/shapeset.hpp"

using namespace rdcr;
namespace ss = rdcr::shapeset;

TEST_CASE("generation is pure in spec and seed") {
  ss::ShapeSetSpec spec;
  spec.K = 6;
  spec.G = 12;
  spec.N = 120;
  auto a = ss::generate(spec, 5);
  auto b = ss::generate(spec, 5);
  auto c = ss::generate(spec, 6);

  CHECK(a->labels == b->labels);
  CHECK(std::memcmp(a->images.data(), b->images.data(),
                    static_cast<size_t>(a->images.size()) * sizeof(double)) == 0);
  // a different seed moves at least one pixel
  CHECK(std::memcmp(a->images.data(), c->images.data(),
                    static_cast<size_t>(a->images.size()) * sizeof(double)) != 0);
}

TEST_CASE("classes are balanced and images well-formed") {
  ss::ShapeSetSpec spec;
  spec.K = 6;
  spec.G = 16;
  spec.N = 600;
  auto d = ss::generate(spec, 9);

  CHECK(d->K == 6);
  CHECK(d->channels == 1);
  CHECK(d->size == 16);
  CHECK(d->count() == 600);

  std::vector<int> per_class(6, 0);
  for (int y : d->labels) ++per_class[static_cast<size_t>(y)];
  for (int n : per_class) CHECK(n == 100);

  // pixels stay in the intensity range and every image has ink
  for (int n = 0; n < d->count(); ++n) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < d->row_len(); ++i) {
      const double v = d->image(n)[i];
      CHECK(v >= 0.0);
      CHECK(v <= 1.2);
      mass += v;
    }
    CHECK(mass > 0.0);
  }

  // the jitter margin keeps a 1px empty border
  for (int n = 0; n < 10; ++n) {
    const double* img = d->image(n);
    for (int i = 0; i < 16; ++i) {
      CHECK(img[i] == 0.0);                 // top row
      CHECK(img[15 * 16 + i] == 0.0);       // bottom row
      CHECK(img[i * 16] == 0.0);            // left column
      CHECK(img[i * 16 + 15] == 0.0);       // right column
    }
  }
}

TEST_CASE("same index differs only by jitter across samples of a class") {
  // two samples of one class have equal ink mass up to the intensity scale
  ss::ShapeSetSpec spec;
  spec.K = 2;
  spec.G = 16;
  spec.N = 4;
  auto d = ss::generate(spec, 3);
  auto count_ink = [&](int n) {
    int c = 0;
    for (Eigen::Index i = 0; i < d->row_len(); ++i)
      if (d->image(n)[i] != 0.0) ++c;
    return c;
  };
  // samples 0 and 2 are both class 0: same glyph mask, same pixel count
  CHECK(d->labels[0] == d->labels[2]);
  CHECK(count_ink(0) == count_ink(2));
}

TEST_CASE("spec validation") {
  ss::ShapeSetSpec spec;
  spec.K = 7;  // more classes than glyphs
  CHECK_THROWS_AS(ss::generate(spec, 1), ConfigError);
  spec.K = 6;
  spec.G = 7;
  CHECK_THROWS_AS(ss::generate(spec, 1), ConfigError);
  spec.G = 16;
  spec.N = 601;  // not a multiple of K
  CHECK_THROWS_AS(ss::generate(spec, 1), ConfigError);
}
