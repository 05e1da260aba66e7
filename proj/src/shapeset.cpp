#include "rdcr/shapeset.hpp"

#include <array>

namespace rdcr::shapeset {

namespace {

// 10x10 stroke masks. None has 90- or 180-degree rotational self-symmetry,
// and no glyph is a rotation of another, so every oriented copy of every
// class stays distinguishable — the rotation task is well-posed.
constexpr std::array<std::array<const char*, 10>, 6> kGlyphs = {{
    // L
    {{"#.........",
      "#.........",
      "#.........",
      "#.........",
      "#.........",
      "#.........",
      "#.........",
      "#.........",
      "#########.",
      ".........."}},
    // arrow up
    {{"....##....",
      "...####...",
      "..######..",
      ".########.",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##...."}},
    // T
    {{"##########",
      "##########",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##....",
      "....##...."}},
    // b: shaft with a closed loop at the bottom
    {{"##........",
      "##........",
      "##........",
      "##........",
      "##........",
      "##........",
      "########..",
      "##....##..",
      "##....##..",
      "########.."}},
    // 7: top bar with a diagonal
    {{"##########",
      "##########",
      "........##",
      ".......##.",
      "......##..",
      ".....##...",
      "....##....",
      "...##.....",
      "..##......",
      ".##......."}},
    // F
    {{"#########.",
      "#########.",
      "##........",
      "##........",
      "########..",
      "########..",
      "##........",
      "##........",
      "##........",
      "##........"}},
}};

}  // namespace

std::shared_ptr<Dataset> generate(const ShapeSetSpec& spec, uint64_t seed) {
  if (spec.K < 2 || spec.K > static_cast<int>(kGlyphs.size()))
    throw ConfigError("shapeset: K must be in [2, " +
                      std::to_string(kGlyphs.size()) + "]");
  if (spec.G < 8) throw ConfigError("shapeset: image side must be >= 8");
  if (spec.N < spec.K || spec.N % spec.K != 0)
    throw ConfigError("shapeset: N must be a positive multiple of K");

  auto data = std::make_shared<Dataset>();
  data->K = spec.K;
  data->channels = 1;
  data->size = spec.G;
  data->labels.resize(static_cast<size_t>(spec.N));
  data->images.setZero(static_cast<Eigen::Index>(spec.N) * spec.G * spec.G);

  const int box = spec.G - 6;  // 1px margin + 2px jitter on each side
  for (int n = 0; n < spec.N; ++n) {
    const int label = n % spec.K;
    data->labels[static_cast<size_t>(n)] = label;
    RngStream rng(derive_key(seed, "shapeset", static_cast<uint64_t>(n)));
    const int dx = static_cast<int>(rng.below(5)) - 2;
    const int dy = static_cast<int>(rng.below(5)) - 2;
    const double intensity = rng.uniform(0.8, 1.2);
    double* img = data->image(n);
    const auto& glyph = kGlyphs[static_cast<size_t>(label)];
    for (int r = 0; r < box; ++r)
      for (int c = 0; c < box; ++c) {
        // nearest-neighbor sample of the 10x10 mask into the glyph box
        const int gr = r * 10 / box;
        const int gc = c * 10 / box;
        if (glyph[static_cast<size_t>(gr)][gc] != '#') continue;
        img[(3 + dy + r) * spec.G + (3 + dx + c)] = intensity;
      }
  }
  data->validate();
  return data;
}

}  // namespace rdcr::shapeset
