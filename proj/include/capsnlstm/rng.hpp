#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace capsnlstm {

/// Independent generator derived from a run seed and a stream name
/// ("init", "dropout", "synth", "shuffle", ...). Same (seed, name) gives the
/// same sequence; different names give unrelated sequences.
std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name);

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name);

}  // namespace capsnlstm
