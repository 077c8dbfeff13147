#include "rscavity/rng.hpp"

#include <array>
#include <cmath>

namespace rscavity {

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
  std::uint64_t h = splitmix64(seed);
  for (auto idx : path) h = splitmix64(h ^ splitmix64(idx + 0x632be59bd9b4e019ULL));
  std::array<std::uint32_t, 8> words{};
  std::uint64_t s = h;
  for (std::size_t i = 0; i < words.size(); i += 2) {
    s = splitmix64(s);
    words[i] = static_cast<std::uint32_t>(s);
    words[i + 1] = static_cast<std::uint32_t>(s >> 32);
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// The std:: distributions are implementation-defined; these keep draws
// identical across standard libraries.

double uniform01(Rng& rng)
{
  // 53 random bits -> [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng)
{
  // Marsaglia polar method, second variate discarded so each call is stateless.
  for (;;) {
    double u = 2.0 * uniform01(rng) - 1.0;
    double v = 2.0 * uniform01(rng) - 1.0;
    double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

double standard_exponential(Rng& rng)
{
  // open interval (0, 1) so the draw is strictly positive and finite
  double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return -std::log(u);
}

}  // namespace rscavity
