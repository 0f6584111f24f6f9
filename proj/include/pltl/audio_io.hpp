#pragma once

// WAV input/output, band-limited resampling to 8 kHz, framing and the
// session manifest.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pltl/common.hpp"
#include "pltl/log.hpp"

namespace pltl {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  int bits_per_sample = 16;  // of the source file; 0 when synthesized
  std::size_t size() const { return samples.size(); }
  double duration() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

// ---------------------------------------------------------------------------
// WAV

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_le16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_le32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_le16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

// Parses a PCM RIFF/WAVE byte buffer. `source` names the input in errors.
inline Waveform parse_wav(const std::vector<unsigned char>& bytes, const std::string& source) {
  auto fail = [&](const std::string& why) -> AudioError { return AudioError(source + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::optional<std::array<std::uint32_t, 4>> fmt;  // format, channels, rate, bits
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t len = detail::read_le32(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16 || len > avail) throw fail("truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      std::uint32_t format = detail::read_le16(f);
      if (format == 0xFFFE && len >= 26) format = detail::read_le16(f + 24);  // extensible
      fmt = std::array<std::uint32_t, 4>{format, detail::read_le16(f + 2), detail::read_le32(f + 4),
                                         detail::read_le16(f + 14)};
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min<std::size_t>(len, avail);
      if (fmt) break;
    }
    pos = body + len + (len & 1u);
  }
  if (!fmt) throw fail("missing fmt chunk");
  if (!data) throw fail("missing data chunk");
  const auto [format, channels, rate, bits] = *fmt;
  if (format != 1) throw fail("unsupported encoding (format tag " + std::to_string(format) + ", PCM required)");
  if (bits != 8 && bits != 16) throw fail("unsupported encoding (" + std::to_string(bits) + "-bit PCM)");
  if (channels == 0) throw fail("zero channels");
  if (rate == 0) throw fail("zero sample rate");
  const std::size_t frame_bytes = channels * (bits / 8);
  const std::size_t n = data_len / frame_bytes;
  if (n == 0) throw fail("zero-length audio");
  if (channels > 1) warn(source + ": " + std::to_string(channels) + " channels, using channel 0");

  Waveform w;
  w.sample_rate = int(rate);
  w.bits_per_sample = int(bits);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* s = data + i * frame_bytes;
    if (bits == 16)
      w.samples[i] = std::int16_t(detail::read_le16(s)) / 32768.0;
    else
      w.samples[i] = (int(s[0]) - 128) / 128.0;
  }
  return w;
}

inline Waveform load_channel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(path.string() + ": cannot open file");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw AudioError(path.string() + ": read error");
  return parse_wav(bytes, path.string());
}

// 16-bit PCM mono. Samples are clipped to the representable range.
inline std::string encode_wav16(const Waveform& w) {
  std::string out;
  const std::uint32_t data_len = std::uint32_t(w.samples.size() * 2);
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_le32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_le32(out, 16);
  detail::put_le16(out, 1);
  detail::put_le16(out, 1);
  detail::put_le32(out, std::uint32_t(w.sample_rate));
  detail::put_le32(out, std::uint32_t(w.sample_rate * 2));
  detail::put_le16(out, 2);
  detail::put_le16(out, 16);
  out += "data";
  detail::put_le32(out, data_len);
  for (double x : w.samples) {
    const double q = std::nearbyint(x * 32768.0);
    const auto v = std::int16_t(std::clamp(q, -32768.0, 32767.0));
    detail::put_le16(out, std::uint16_t(v));
  }
  return out;
}

inline void write_wav16(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioError(path.string() + ": cannot open for writing");
  const std::string bytes = encode_wav16(w);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw AudioError(path.string() + ": write failed");
}

// ---------------------------------------------------------------------------
// Resampling

inline bool is_supported_rate(int rate) {
  static constexpr std::array<int, 5> kRates{8000, 16000, 22050, 44100, 48000};
  return std::find(kRates.begin(), kRates.end(), rate) != kRates.end();
}

// Rational polyphase resampler with a Kaiser-windowed sinc prototype. Each
// output sample is a weighted sum over the input samples within
// `half_span` output periods of its position.
class PolyphaseResampler {
 public:
  PolyphaseResampler(int src_rate, int dst_rate, int half_span = 32, double beta = 8.0,
                     double cutoff_fraction = 0.95) {
    const int g = std::gcd(src_rate, dst_rate);
    up_ = dst_rate / g;
    down_ = src_rate / g;
    const double ratio = double(up_) / double(down_);
    const double stretch = std::max(1.0, 1.0 / ratio);
    const double fc = 0.5 * std::min(1.0, ratio) * cutoff_fraction;  // cycles per input sample
    const double width = half_span * stretch;                          // input samples
    taps_half_ = int(std::ceil(width));
    const int taps = 2 * taps_half_;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    table_.assign(std::size_t(up_) * taps, 0.0);
    for (int p = 0; p < up_; ++p) {
      const double frac = double(p) / up_;
      for (int k = 0; k < taps; ++k) {
        // Input sample index offset relative to floor(position) is k - taps_half_ + 1.
        const double tau = frac - double(k - taps_half_ + 1);
        double h = 0.0;
        if (std::abs(tau) < width) {
          const double x = 2.0 * fc * tau;
          const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
          const double r = tau / width;
          const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
          h = 2.0 * fc * sinc * win;
        }
        table_[std::size_t(p) * taps + k] = h;
      }
    }
  }

  std::size_t output_length(std::size_t n) const {
    return std::size_t((std::uint64_t(n) * up_) / down_);
  }

  std::vector<double> process(std::span<const double> x) const {
    const std::size_t n_out = output_length(x.size());
    const int taps = 2 * taps_half_;
    std::vector<double> y(n_out);
    for (std::size_t n = 0; n < n_out; ++n) {
      const std::uint64_t num = std::uint64_t(n) * down_;
      const auto base = std::int64_t(num / up_);
      const auto phase = std::size_t(num % up_);
      const double* h = table_.data() + phase * taps;
      double acc = 0.0, wsum = 0.0, wall = 0.0;
      for (int k = 0; k < taps; ++k) {
        const std::int64_t j = base + k - taps_half_ + 1;
        wall += h[k];
        if (j < 0 || j >= std::int64_t(x.size())) continue;
        acc += h[k] * x[std::size_t(j)];
        wsum += h[k];
      }
      // Unit DC gain everywhere, including where the kernel hangs off an edge.
      y[n] = wsum != 0.0 ? acc / wsum : acc / wall;
    }
    return y;
  }

 private:
  int up_ = 1;
  int down_ = 1;
  int taps_half_ = 0;
  std::vector<double> table_;
};

inline Waveform resample_to_8k(const Waveform& w) {
  if (w.sample_rate == kSampleRate) return w;
  if (!is_supported_rate(w.sample_rate))
    throw AudioError("unsupported source sample rate " + std::to_string(w.sample_rate) + " Hz");
  PolyphaseResampler rs(w.sample_rate, kSampleRate);
  Waveform out;
  out.samples = rs.process(w.samples);
  out.sample_rate = kSampleRate;
  out.bits_per_sample = w.bits_per_sample;
  return out;
}

// ---------------------------------------------------------------------------
// Framing

struct FrameGrid {
  int frame_length = kFrameLength;
  int hop = kFrameHop;
  std::size_t num_frames = 0;
  double origin_time = 0.0;

  static std::size_t count(std::size_t num_samples, int frame_length = kFrameLength, int hop = kFrameHop) {
    if (num_samples < std::size_t(frame_length)) return 0;
    return (num_samples - frame_length) / hop + 1;
  }
  double start_time(std::size_t i) const { return origin_time + double(i) * hop / kSampleRate; }
};

inline FrameGrid make_grid(std::size_t num_samples, int frame_length = kFrameLength, int hop = kFrameHop) {
  FrameGrid g;
  g.frame_length = frame_length;
  g.hop = hop;
  g.num_frames = FrameGrid::count(num_samples, frame_length, hop);
  return g;
}

// Frames as matrix rows, unwindowed.
inline Matrix frame(const Waveform& w, int frame_length = kFrameLength, int hop = kFrameHop) {
  const FrameGrid g = make_grid(w.size(), frame_length, hop);
  Matrix m(g.num_frames, std::size_t(frame_length));
  for (std::size_t i = 0; i < g.num_frames; ++i) {
    auto src = std::span<const double>(w.samples).subspan(i * hop, std::size_t(frame_length));
    std::copy(src.begin(), src.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Session manifest

enum class Role { leader, student };

inline const char* to_string(Role r) { return r == Role::leader ? "leader" : "student"; }

struct ChannelSpec {
  int channel_id = 0;
  std::string member_label;
  Role role = Role::student;
  std::filesystem::path audio_path;  // resolved against the manifest directory
  std::optional<std::filesystem::path> sad_path;
};

struct SessionManifest {
  std::string session_id;
  std::vector<ChannelSpec> channels;  // sorted by channel_id
  std::optional<std::string> notes;

  const ChannelSpec& channel(int id) const {
    for (const auto& c : channels)
      if (c.channel_id == id) return c;
    throw ManifestError("no channel " + std::to_string(id));
  }
};

inline void validate(const SessionManifest& m) {
  if (m.session_id.empty()) throw ManifestError("manifest: session_id is empty");
  if (m.channels.size() < 2) throw ManifestError("manifest: at least 2 channels required");
  std::set<int> ids;
  std::set<std::string> labels;
  int leaders = 0;
  for (const auto& c : m.channels) {
    if (!ids.insert(c.channel_id).second)
      throw ManifestError("manifest: duplicate channel_id " + std::to_string(c.channel_id));
    if (c.role == Role::leader) ++leaders;
    if (c.member_label.empty()) throw ManifestError("manifest: empty member_label");
    // labels become RTTM and CSV fields
    if (c.member_label.find_first_of(" \t\r\n,\"") != std::string::npos || c.member_label == "unattributed")
      throw ManifestError("manifest: member_label '" + c.member_label + "' is not allowed");
    if (!labels.insert(c.member_label).second)
      throw ManifestError("manifest: duplicate member_label '" + c.member_label + "'");
  }
  if (*ids.begin() != 1 || *ids.rbegin() != int(ids.size()))
    throw ManifestError("manifest: channel_ids must be contiguous from 1");
  if (leaders != 1) throw ManifestError("manifest: exactly one leader required, found " + std::to_string(leaders));
}

inline SessionManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SessionManifest m;
  try {
    m.session_id = j.at("session_id").get<std::string>();
    if (j.contains("notes") && !j.at("notes").is_null()) m.notes = j.at("notes").get<std::string>();
    for (const auto& c : j.at("channels")) {
      ChannelSpec spec;
      spec.channel_id = c.at("channel_id").get<int>();
      spec.member_label = c.at("member_label").get<std::string>();
      const auto role = c.at("role").get<std::string>();
      if (role == "leader")
        spec.role = Role::leader;
      else if (role == "student")
        spec.role = Role::student;
      else
        throw ManifestError("manifest: unknown role '" + role + "'");
      spec.audio_path = base_dir / c.at("audio_path").get<std::string>();
      if (c.contains("sad_path") && !c.at("sad_path").is_null())
        spec.sad_path = base_dir / c.at("sad_path").get<std::string>();
      m.channels.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  std::sort(m.channels.begin(), m.channels.end(),
            [](const auto& a, const auto& b) { return a.channel_id < b.channel_id; });
  validate(m);
  return m;
}

inline SessionManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(path.string() + ": cannot open manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

inline nlohmann::json to_json(const SessionManifest& m, const std::filesystem::path& relative_to) {
  nlohmann::json j;
  j["session_id"] = m.session_id;
  auto& chans = j["channels"] = nlohmann::json::array();
  for (const auto& c : m.channels) {
    nlohmann::json cj;
    cj["channel_id"] = c.channel_id;
    cj["member_label"] = c.member_label;
    cj["role"] = to_string(c.role);
    cj["audio_path"] = c.audio_path.lexically_relative(relative_to).generic_string();
    if (c.sad_path) cj["sad_path"] = c.sad_path->lexically_relative(relative_to).generic_string();
    chans.push_back(cj);
  }
  if (m.notes) j["notes"] = *m.notes;
  return j;
}

// Loads every channel, resamples to 8 kHz and truncates all to the shortest.
inline std::vector<Waveform> load_session_audio(const SessionManifest& m) {
  std::vector<Waveform> out;
  out.reserve(m.channels.size());
  for (const auto& c : m.channels) {
    Waveform w = load_channel(c.audio_path);
    if (!is_supported_rate(w.sample_rate))
      throw AudioError(c.audio_path.string() + ": unsupported sample rate " + std::to_string(w.sample_rate));
    out.push_back(resample_to_8k(w));
  }
  std::size_t shortest = out.front().size();
  for (const auto& w : out) shortest = std::min(shortest, w.size());
  for (auto& w : out) {
    if (w.size() != shortest) {
      warn("session " + m.session_id + ": truncating channel audio to " + std::to_string(shortest) + " samples");
      w.samples.resize(shortest);
    }
  }
  return out;
}

}  // namespace pltl
