#include "ffsm/engine/dump.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ffsm/error.hpp"

namespace ffsm {

template <typename T>
void dump_csv(const Tensor<T>& t, std::ostream& out) {
  const Shape& s = t.shape();
  out << "shape=" << s.n << ',' << s.c << ',' << s.h << ',' << s.w << '\n';
  out << std::setprecision(std::numeric_limits<T>::max_digits10);
  const T* p = t.data();
  for (std::size_t row = 0; row < s.n * s.c * s.h; ++row) {
    for (std::size_t x = 0; x < s.w; ++x) {
      if (x) out << ',';
      out << p[row * s.w + x];
    }
    out << '\n';
  }
}

template <typename T>
void dump_csv(const Tensor<T>& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  dump_csv(t, out);
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
Tensor<T> read_dump_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("shape=", 0) != 0) throw FormatError("dump: missing shape header");
  std::size_t dims[4];
  {
    std::istringstream hs(line.substr(6));
    std::string field;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!std::getline(hs, field, ',')) throw FormatError("dump: shape needs four dimensions");
      auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), dims[i]);
      if (ec != std::errc() || end != field.data() + field.size()) throw FormatError("dump: bad shape '" + line + "'");
    }
    if (std::getline(hs, field, ',')) throw FormatError("dump: shape needs four dimensions");
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  std::vector<T> values;
  values.reserve(shape.numel());
  for (std::size_t row = 0; row < shape.n * shape.c * shape.h; ++row) {
    if (!std::getline(in, line)) throw FormatError("dump: truncated at row " + std::to_string(row));
    std::istringstream rs(line);
    std::string field;
    std::size_t count = 0;
    while (std::getline(rs, field, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != field.size()) throw FormatError("dump: bad value '" + field + "'");
      values.push_back(static_cast<T>(v));
      ++count;
    }
    if (count != shape.w) throw FormatError("dump: row " + std::to_string(row) + " has " + std::to_string(count) + " values");
  }
  return Tensor<T>(shape, std::move(values));
}

#define FFSM_INSTANTIATE(T)                                                        \
  template void dump_csv<T>(const Tensor<T>&, std::ostream&);                      \
  template void dump_csv<T>(const Tensor<T>&, const std::filesystem::path&);       \
  template Tensor<T> read_dump_csv<T>(std::istream&);
FFSM_INSTANTIATE(float)
FFSM_INSTANTIATE(double)
#undef FFSM_INSTANTIATE

}  // namespace ffsm
