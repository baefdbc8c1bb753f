#pragma once

#include <filesystem>
#include <iosfwd>

#include "ffsm/engine/tensor.hpp"

namespace ffsm {

// Debug CSV: a "shape=N,C,H,W" header, then one line per (n, c, h) row of W
// values in row-major order, printed with round-trip precision.
template <typename T>
void dump_csv(const Tensor<T>& t, std::ostream& out);
template <typename T>
void dump_csv(const Tensor<T>& t, const std::filesystem::path& path);

// Reads a dump back. Throws FormatError on a malformed header or body.
template <typename T>
Tensor<T> read_dump_csv(std::istream& in);

}  // namespace ffsm
