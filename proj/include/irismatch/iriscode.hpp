#pragma once

// Classical bitcode pipeline: 1-D log-Gabor phase quantization along the
// angular axis, masked Hamming distance, and rotation search by circular
// column shifts.

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "irismatch/binary_io.hpp"
#include "irismatch/image.hpp"

namespace irismatch {

struct LogGaborSpec {
  double wavelength = 18.0;   // center wavelength, pixels
  double sigma_on_f = 0.5;    // bandwidth ratio
  std::size_t row_step = 2;   // encode every row_step-th row

  void validate() const {
    if (!(wavelength >= 3.0)) throw std::invalid_argument("LogGaborSpec: wavelength must be >= 3");
    if (!(sigma_on_f > 0.0 && sigma_on_f < 1.0)) {
      throw std::invalid_argument("LogGaborSpec: sigma/f0 must lie in (0, 1)");
    }
    if (row_step == 0) throw std::invalid_argument("LogGaborSpec: row step must be positive");
  }
};

/// Responses weaker than this fraction of the row's strongest response carry
/// no reliable phase and are masked out.
inline constexpr double kRelativeMagnitudeFloor = 1e-4;
/// Absolute floor for rows whose strongest response is itself numerical noise.
inline constexpr double kAbsoluteMagnitudeFloor = 1e-10;

/// Two bits per sample (sign of real part, sign of imaginary part) and a
/// validity mask of the same shape. Bit column 2j / 2j+1 belong to sample j.
struct Bitcode {
  std::size_t rows = 0;
  std::size_t samples = 0;
  std::vector<std::uint64_t> bits;
  std::vector<std::uint64_t> mask;

  Bitcode() = default;
  Bitcode(std::size_t r, std::size_t s)
      : rows(r), samples(s), bits(r * words_per_row(), 0), mask(r * words_per_row(), 0) {}

  std::size_t bit_columns() const { return 2 * samples; }
  std::size_t words_per_row() const { return (2 * samples + 63) / 64; }

  bool bit(std::size_t r, std::size_t c) const { return get(bits, r, c); }
  bool valid(std::size_t r, std::size_t c) const { return get(mask, r, c); }
  void set_bit(std::size_t r, std::size_t c, bool v) { put(bits, r, c, v); }
  void set_valid(std::size_t r, std::size_t c, bool v) { put(mask, r, c, v); }

  friend bool operator==(const Bitcode&, const Bitcode&) = default;

 private:
  bool get(const std::vector<std::uint64_t>& v, std::size_t r, std::size_t c) const {
    return (v[r * words_per_row() + c / 64] >> (c % 64)) & 1u;
  }
  void put(std::vector<std::uint64_t>& v, std::size_t r, std::size_t c, bool on) {
    auto& w = v[r * words_per_row() + c / 64];
    const std::uint64_t m = std::uint64_t{1} << (c % 64);
    w = on ? (w | m) : (w & ~m);
  }
};

/// Thrown when two bitcodes share no jointly valid bit.
class NoComparableBits : public std::runtime_error {
 public:
  NoComparableBits() : std::runtime_error("no comparable bits: joint mask is empty") {}
};

/// Log-Gabor transfer function on the positive frequencies 0..n/2 of an
/// n-point DFT (cycles per sample k/n); zero at DC.
inline std::vector<double> log_gabor_transfer(std::size_t n, const LogGaborSpec& spec) {
  std::vector<double> g(n / 2 + 1, 0.0);
  const double f0 = 1.0 / spec.wavelength;
  const double denom = 2.0 * std::pow(std::log(spec.sigma_on_f), 2.0);
  for (std::size_t k = 1; k < g.size(); ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(n);
    g[k] = std::exp(-std::pow(std::log(f / f0), 2.0) / denom);
  }
  return g;
}

/// Complex one-sided log-Gabor response of a periodic signal.
inline std::vector<std::complex<double>> log_gabor_response(const std::vector<double>& signal,
                                                            const std::vector<double>& transfer) {
  const std::size_t n = signal.size();
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, signal);
  for (std::size_t k = 0; k < n; ++k) spectrum[k] *= k < transfer.size() ? transfer[k] : 0.0;
  std::vector<std::complex<double>> response;
  fft.inv(response, spectrum);
  return response;
}

/// Encodes rows 0, step, 2*step, ... of `img`. `mask` (same shape, nonzero =
/// usable) may be empty for an all-valid mask.
inline Bitcode encode(const NormalizedIris& img, const std::vector<std::uint8_t>& mask,
                      const LogGaborSpec& spec = {}) {
  spec.validate();
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("encode: empty image");
  if (!mask.empty() && mask.size() != img.pixels.size()) {
    throw std::invalid_argument("encode: mask shape differs from image shape");
  }
  const std::size_t out_rows = (img.height + spec.row_step - 1) / spec.row_step;
  Bitcode code(out_rows, img.width);
  const auto transfer = log_gabor_transfer(img.width, spec);
  std::vector<double> row(img.width);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const std::size_t src = r * spec.row_step;
    for (std::size_t j = 0; j < img.width; ++j) row[j] = img.at(src, j);
    const auto response = log_gabor_response(row, transfer);
    double peak = 0.0;
    for (const auto& z : response) peak = std::max(peak, std::abs(z));
    const double floor = std::max(kRelativeMagnitudeFloor * peak, kAbsoluteMagnitudeFloor);
    for (std::size_t j = 0; j < img.width; ++j) {
      code.set_bit(r, 2 * j, response[j].real() > 0.0);
      code.set_bit(r, 2 * j + 1, response[j].imag() > 0.0);
      const bool usable = (mask.empty() || mask[src * img.width + j] != 0) && std::abs(response[j]) >= floor;
      code.set_valid(r, 2 * j, usable);
      code.set_valid(r, 2 * j + 1, usable);
    }
  }
  return code;
}

inline Bitcode encode(const NormalizedIris& img, const LogGaborSpec& spec = {}) { return encode(img, {}, spec); }

/// Fraction of differing bits among jointly valid positions.
inline double masked_hamming(const Bitcode& a, const Bitcode& b) {
  if (a.rows != b.rows || a.samples != b.samples) {
    throw std::invalid_argument("masked_hamming: bitcode shapes differ");
  }
  std::size_t differing = 0, comparable = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const std::uint64_t joint = a.mask[i] & b.mask[i];
    comparable += static_cast<std::size_t>(std::popcount(joint));
    differing += static_cast<std::size_t>(std::popcount((a.bits[i] ^ b.bits[i]) & joint));
  }
  if (comparable == 0) throw NoComparableBits();
  return static_cast<double>(differing) / static_cast<double>(comparable);
}

/// Circular shift by `shift` samples; positive moves content toward larger
/// column indices. Bits and mask move together.
inline Bitcode circular_shift(const Bitcode& code, long shift) {
  Bitcode out(code.rows, code.samples);
  const long n = static_cast<long>(code.samples);
  if (n == 0) return out;
  const long k = ((shift % n) + n) % n;
  for (std::size_t r = 0; r < code.rows; ++r) {
    for (long j = 0; j < n; ++j) {
      const auto dst = static_cast<std::size_t>((j + k) % n);
      for (std::size_t part = 0; part < 2; ++part) {
        out.set_bit(r, 2 * dst + part, code.bit(r, 2 * static_cast<std::size_t>(j) + part));
        out.set_valid(r, 2 * dst + part, code.valid(r, 2 * static_cast<std::size_t>(j) + part));
      }
    }
  }
  return out;
}

/// Shifted copies of a bitcode in search order 0, -1, +1, -2, +2, ...
struct ShiftedBitcodes {
  std::vector<long> shifts;
  std::vector<Bitcode> codes;
};

inline std::vector<long> shift_search_order(long max_shift) {
  std::vector<long> order{0};
  for (long s = 1; s <= max_shift; ++s) {
    order.push_back(-s);
    order.push_back(s);
  }
  return order;
}

inline ShiftedBitcodes precompute_shifts(const Bitcode& code, long max_shift) {
  if (max_shift < 0 || static_cast<std::size_t>(max_shift) >= code.samples) {
    throw std::invalid_argument("precompute_shifts: max shift must lie in [0, samples)");
  }
  ShiftedBitcodes out;
  out.shifts = shift_search_order(max_shift);
  for (long s : out.shifts) out.codes.push_back(circular_shift(code, s));
  return out;
}

struct ShiftMatch {
  double score = 0.0;
  long shift = 0;
};

/// Minimum masked Hamming distance of `a` against the shifted copies; ties go
/// to the smallest |shift|, then to the negative shift. Shifts with no
/// comparable bits are skipped.
inline ShiftMatch match_with_shifts(const Bitcode& a, const ShiftedBitcodes& b) {
  std::optional<ShiftMatch> best;
  for (std::size_t i = 0; i < b.shifts.size(); ++i) {
    double score;
    try {
      score = masked_hamming(a, b.codes[i]);
    } catch (const NoComparableBits&) {
      continue;
    }
    if (!best || score < best->score) best = ShiftMatch{score, b.shifts[i]};
  }
  if (!best) throw NoComparableBits();
  return *best;
}

inline ShiftMatch match_with_shifts(const Bitcode& a, const Bitcode& b, long max_shift) {
  return match_with_shifts(a, precompute_shifts(b, max_shift));
}

/// Match iff the score is strictly below the threshold.
inline bool decide(double score, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("decide: threshold must lie in [0, 1]");
  return score < threshold;
}

// Bitcode file: "IBIT" | u16 version | u32 rows | u32 samples |
// rows of packed bits, then rows of packed mask; each row is
// ceil(2*samples/8) bytes, bit column c at byte c/8, bit c%8.
inline constexpr std::uint16_t kBitcodeVersion = 1;

inline void write_bitcode(std::ostream& out, const Bitcode& code) {
  io::write_magic(out, "IBIT");
  io::write_le<std::uint16_t>(out, kBitcodeVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(code.rows));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(code.samples));
  const std::size_t row_bytes = (code.bit_columns() + 7) / 8;
  for (int plane = 0; plane < 2; ++plane) {
    for (std::size_t r = 0; r < code.rows; ++r) {
      std::string packed(row_bytes, '\0');
      for (std::size_t c = 0; c < code.bit_columns(); ++c) {
        const bool on = plane == 0 ? code.bit(r, c) : code.valid(r, c);
        if (on) packed[c / 8] = static_cast<char>(static_cast<unsigned char>(packed[c / 8]) | (1u << (c % 8)));
      }
      out.write(packed.data(), static_cast<std::streamsize>(packed.size()));
    }
  }
}

inline Bitcode read_bitcode(std::istream& in) {
  io::expect_magic(in, "IBIT", "bitcode");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kBitcodeVersion) throw FormatError("bitcode: unsupported version " + std::to_string(version));
  const auto rows = io::read_le<std::uint32_t>(in);
  const auto samples = io::read_le<std::uint32_t>(in);
  Bitcode code(rows, samples);
  const std::size_t row_bytes = (code.bit_columns() + 7) / 8;
  for (int plane = 0; plane < 2; ++plane) {
    for (std::size_t r = 0; r < code.rows; ++r) {
      const std::string packed = io::read_bytes(in, row_bytes);
      for (std::size_t c = 0; c < code.bit_columns(); ++c) {
        const bool on = (static_cast<unsigned char>(packed[c / 8]) >> (c % 8)) & 1u;
        if (plane == 0) {
          code.set_bit(r, c, on);
        } else {
          code.set_valid(r, c, on);
        }
      }
    }
  }
  return code;
}

inline void save_bitcode(const Bitcode& code, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_bitcode(out, code);
}

inline Bitcode load_bitcode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_bitcode(in);
}

}  // namespace irismatch
