#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "masm/network.hpp"
#include "masm/rng.hpp"

namespace masm {

struct Checkpoint {
  Model model;
  std::string config_json;  // echo of the producing TrainConfig
  std::uint64_t step = 0;
  Rng rng{0};
};

// File = "MASMCKP1" magic, u64 manifest length, JSON manifest (config echo,
// step counter, RNG state, model shape and projection kinds), then parameter
// blobs in tensor layout: embed; per block norm1 gain/bias, q,k,v,o (matrix or
// decomposed layer), norm2 gain/bias, mlp_in, mlp_out; head.
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace masm
