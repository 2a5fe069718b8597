/* headsel - learned attention-head sharing for multi-task sequence models.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 */

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace headsel {

// Derives an independent sub-seed from a master seed and a purpose string.
// All stochastic streams (init, gumbel, dropout, batch order, data splits)
// hang off one master seed through this function, so adding draws to one
// stream never perturbs another.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

// Seeded random source. One instance per stream, single-threaded use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // uniform integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi);
  // standard Gumbel(0, 1): -log(-log(u)) with u in (0, 1)
  double gumbel();
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace headsel
