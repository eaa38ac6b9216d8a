#pragma once
//
// Clip -> patch -> log-mel feature chain.
//
// Conventions (fixed; golden tests depend on them):
//   sample rate      22050 Hz
//   patch            1 s (22050 samples), hop 0.5 s, last patch right-aligned
//   frame            661 samples (30 ms), hop 220 (10 ms), centered with
//                    reflection padding -> 101 frames per patch
//   window           periodic Hann
//   transform        1024-point FFT, power spectrum of bins 0..512
//   mel              96 HTK-scale triangles over 0..11025 Hz, peak 1
//   output           ln(mel power + 1e-10)

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

inline constexpr std::size_t kSampleRate = 22050;
inline constexpr std::size_t kPatchSamples = kSampleRate;
inline constexpr std::size_t kPatchHop = kSampleRate / 2;
inline constexpr std::size_t kFrameLength = 661;
inline constexpr std::size_t kFrameHop = 220;
inline constexpr std::size_t kFftSize = 1024;
inline constexpr std::size_t kMelBands = 96;
inline constexpr std::size_t kPatchFrames = kPatchSamples / kFrameHop + 1;  // 101
inline constexpr double kLogFloor = 1e-10;

struct AudioClip {
  std::vector<double> samples;
  double sample_rate = static_cast<double>(kSampleRate);
};

// [start, end) in samples. For clips shorter than one patch, end exceeds the
// clip length and the window is filled by repeating the clip.
struct PatchRange {
  std::size_t start;
  std::size_t end;

  friend bool operator==(const PatchRange&, const PatchRange&) = default;
};

inline std::vector<PatchRange> segment_patches(std::size_t num_samples, std::size_t sample_rate) {
  detail::require(num_samples >= 1, "segment_patches: empty clip");
  detail::require(sample_rate >= 2, "segment_patches: bad sample rate");
  const std::size_t len = sample_rate;
  const std::size_t hop = sample_rate / 2;
  if (num_samples <= len) return {{0, len}};

  std::vector<PatchRange> out;
  std::size_t start = 0;
  for (; start + len <= num_samples; start += hop) out.push_back({start, start + len});
  if (out.back().end < num_samples) out.push_back({num_samples - len, num_samples});
  return out;
}

// Samples of one patch, tiling the clip when the range runs past its end.
inline std::vector<double> extract_window(std::span<const double> samples, PatchRange r) {
  detail::require(!samples.empty(), "extract_window: empty clip");
  std::vector<double> out(r.end - r.start);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = samples[(r.start + i) % samples.size()];
  return out;
}

namespace detail {

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)),
                                     std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  std::vector<double> edges_hz;        // kMelBands + 2 points
  std::vector<std::vector<double>> w;  // [band][bin]

  MelFilterbank() {
    const double top = hz_to_mel(static_cast<double>(kSampleRate) / 2.0);
    for (std::size_t i = 0; i < kMelBands + 2; ++i)
      edges_hz.push_back(mel_to_hz(top * static_cast<double>(i) / static_cast<double>(kMelBands + 1)));
    const std::size_t bins = kFftSize / 2 + 1;
    w.assign(kMelBands, std::vector<double>(bins, 0.0));
    for (std::size_t m = 0; m < kMelBands; ++m) {
      const double lo = edges_hz[m], mid = edges_hz[m + 1], hi = edges_hz[m + 2];
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * static_cast<double>(kSampleRate) / kFftSize;
        const double up = (f - lo) / (mid - lo);
        const double down = (hi - f) / (hi - mid);
        w[m][k] = std::max(0.0, std::min(up, down));
      }
    }
  }
};

inline const MelFilterbank& mel_filterbank() {
  static const MelFilterbank fb;
  return fb;
}

inline const std::vector<double>& hann_window() {
  static const std::vector<double> win = [] {
    std::vector<double> v(kFrameLength);
    for (std::size_t i = 0; i < kFrameLength; ++i)
      v[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(kFrameLength));
    return v;
  }();
  return win;
}

inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  while (i < 0 || i > last) i = i < 0 ? -i : 2 * last - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Center frequency of each mel band, in Hz.
inline std::vector<double> mel_band_centers() {
  const auto& e = detail::mel_filterbank().edges_hz;
  return {e.begin() + 1, e.end() - 1};
}

// 101 x 96 log-mel array from exactly one second of 22050 Hz audio.
inline Matrix mel_patch(std::span<const double> window) {
  if (window.size() != kPatchSamples)
    throw ValidationError("mel_patch: window must hold " + std::to_string(kPatchSamples) +
                          " samples, got " + std::to_string(window.size()));
  const auto& fb = detail::mel_filterbank();
  const auto& hann = detail::hann_window();
  const auto half = static_cast<std::ptrdiff_t>(kFrameLength / 2);

  Matrix out(kPatchFrames, kMelBands);
  std::vector<std::complex<double>> buf(kFftSize);
  std::vector<double> power(kFftSize / 2 + 1);
  for (std::size_t t = 0; t < kPatchFrames; ++t) {
    const auto center = static_cast<std::ptrdiff_t>(t * kFrameHop);
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t j = 0; j < kFrameLength; ++j) {
      const std::size_t idx = detail::reflect(center - half + static_cast<std::ptrdiff_t>(j), window.size());
      buf[j] = window[idx] * hann[j];
    }
    detail::fft(buf);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
    auto row = out.row(t);
    for (std::size_t m = 0; m < kMelBands; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += fb.w[m][k] * power[k];
      row[m] = std::log(e + kLogFloor);
    }
  }
  return out;
}

// All log-mel patches of a clip at 22050 Hz.
inline std::vector<Matrix> clip_patches(const AudioClip& clip) {
  if (std::abs(clip.sample_rate - static_cast<double>(kSampleRate)) > 1e-9)
    throw ValidationError("clip_patches: audio must be sampled at 22050 Hz");
  std::vector<Matrix> out;
  for (const auto& r : segment_patches(clip.samples.size(), kSampleRate))
    out.push_back(mel_patch(extract_window(clip.samples, r)));
  return out;
}

struct MelPatch {
  Matrix values;  // [101 x 96]
  std::string source_clip;
  std::vector<double> labels;  // binary, one entry per vocabulary class
};

inline std::vector<double> label_vector(const ClipRecord& clip, const std::vector<std::string>& vocab) {
  std::vector<double> v(vocab.size(), 0.0);
  for (std::size_t i = 0; i < vocab.size(); ++i) v[i] = clip.labels.count(vocab[i]) ? 1.0 : 0.0;
  return v;
}

inline std::vector<MelPatch> inherit_labels(const ClipRecord& clip, const std::vector<std::string>& vocab,
                                            std::vector<Matrix> patches) {
  detail::require(!clip.labels.empty(), "inherit_labels: clip has no labels");
  const auto labels = label_vector(clip, vocab);
  std::vector<MelPatch> out;
  out.reserve(patches.size());
  for (auto& p : patches) out.push_back({std::move(p), clip.clip_id, labels});
  return out;
}

// Patches flattened row-major (frame-major) into training rows.
inline LabeledBatch patches_to_batch(const std::vector<MelPatch>& patches) {
  LabeledBatch b;
  for (const auto& p : patches) {
    b.inputs.append_row(p.values.data());
    b.targets.append_row(p.labels);
  }
  return b;
}

// Clip-level scores: per-class mean over the clip's patches.
inline std::vector<double> clip_scores(const Matrix& patch_scores) {
  if (patch_scores.rows() == 0) throw ValidationError("clip_scores: no patches");
  std::vector<double> out(patch_scores.cols(), 0.0);
  for (std::size_t r = 0; r < patch_scores.rows(); ++r)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += patch_scores(r, c);
  for (auto& v : out) v /= static_cast<double>(patch_scores.rows());
  return out;
}

inline void write_patch_text(std::ostream& out, const Matrix& patch) {
  char buf[32];
  for (std::size_t r = 0; r < patch.rows(); ++r) {
    for (std::size_t c = 0; c < patch.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", patch(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

// Minimal RIFF/WAVE reader: PCM 8/16/24/32-bit or IEEE float 32/64, any
// channel count (averaged to mono).
inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto u16 = [&](std::size_t o) { return std::uint32_t(bytes[o]) | std::uint32_t(bytes[o + 1]) << 8; };
  auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  auto bad = [&](const char* what) { return RuntimeFailure(path + ": " + what); };
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
    throw bad("not a RIFF/WAVE file");

  std::uint32_t format = 0, channels = 0, rate = 0, bits = 0;
  std::size_t data_off = 0, data_len = 0;
  for (std::size_t o = 12; o + 8 <= bytes.size();) {
    const std::string id(bytes.begin() + o, bytes.begin() + o + 4);
    const std::size_t len = u32(o + 4);
    if (o + 8 + len > bytes.size()) throw bad("truncated chunk");
    if (id == "fmt ") {
      if (len < 16) throw bad("short fmt chunk");
      format = u16(o + 8);
      channels = u16(o + 10);
      rate = u32(o + 12);
      bits = u16(o + 22);
      if (format == 0xFFFE && len >= 26) format = u16(o + 32);  // extensible
    } else if (id == "data") {
      data_off = o + 8;
      data_len = len;
    }
    o += 8 + len + (len & 1);
  }
  if (!channels || !data_off) throw bad("missing fmt or data chunk");
  if (!(format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) &&
      !(format == 3 && (bits == 32 || bits == 64)))
    throw bad("unsupported sample format");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const std::size_t o = data_off + (f * channels + ch) * width;
      double v = 0.0;
      if (format == 3) {
        if (bits == 32) {
          std::uint32_t raw = u32(o);
          float x;
          std::memcpy(&x, &raw, 4);
          v = x;
        } else {
          std::uint64_t raw = std::uint64_t(u32(o)) | std::uint64_t(u32(o + 4)) << 32;
          std::memcpy(&v, &raw, 8);
        }
      } else if (bits == 8) {
        v = (static_cast<double>(bytes[o]) - 128.0) / 128.0;
      } else {
        std::uint32_t raw = 0;
        for (std::size_t b = 0; b < width; ++b) raw |= std::uint32_t(bytes[o + b]) << (8 * b);
        const std::uint32_t sign = 1u << (bits - 1);
        const auto s = static_cast<std::int64_t>(raw & (sign - 1)) - ((raw & sign) ? std::int64_t(sign) : 0);
        v = static_cast<double>(s) / static_cast<double>(sign);
      }
      acc += v;
    }
    clip.samples[f] = acc / static_cast<double>(channels);
  }
  return clip;
}

}  // namespace fedsim
