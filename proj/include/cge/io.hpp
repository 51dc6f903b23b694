#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>
#include <span>
#include <string>

#include "cge/bilevel.hpp"
#include "cge/error.hpp"

namespace cge {

/// 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_fingerprint(const std::string& path) { return hex64(fnv1a(read_file(path))); }

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace) {
  out << "step,L_s_train,L_u,L_val,mean_weight,weight_variance\n";
  for (const auto& r : trace) {
    out << r.step << ',' << fmt_double(r.l_s_train) << ',' << fmt_double(r.l_u) << ','
        << fmt_double(r.l_val) << ',' << fmt_double(r.mean_weight) << ','
        << fmt_double(r.weight_variance) << '\n';
  }
}

}  // namespace cge
