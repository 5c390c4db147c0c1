#pragma once

// Time-tag streams, the binary tag file format, multistop cross-correlation
// histograms, g2 normalization and HOM-visibility extraction.
//
// Tag file layout (little-endian):
//   header, 16 bytes: "TTAG" | version u16 = 1 | channel_count u16 |
//                     resolution_ps u32 | reserved u32 (written as 0)
//   records, 12 bytes each: timestamp_ps u64 | channel u16 | flags u16
// Channels are numbered 1..channel_count.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace homlab::tags {

namespace flags {
inline constexpr std::uint16_t kDarkCount = 1u << 0;
inline constexpr std::uint16_t kBackground = 1u << 1;
inline constexpr std::uint16_t kPaired = 1u << 2;  // routing was conditioned on an interfering partner
}  // namespace flags

struct TagRecord {
  std::uint64_t timestamp_ps = 0;
  std::uint16_t channel = 1;
  std::uint16_t flags = 0;

  friend bool operator==(const TagRecord&, const TagRecord&) = default;
};

inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::size_t kRecordBytes = 12;
inline constexpr std::uint16_t kFormatVersion = 1;

struct TagStream {
  std::vector<TagRecord> records;
  std::uint16_t channel_count = 2;
  std::uint32_t resolution_ps = 1;
  // Acquisition length [s]. Not stored in the file; 0 means unknown and
  // acquisition_duration() falls back to an estimate from the timestamps.
  double duration_s = 0.0;

  /// Throws PreconditionError on unsorted timestamps or undeclared channels.
  void validate() const;

  std::vector<std::uint64_t> counts_per_channel() const;  // index 0 unused

  /// duration_s when known, else (last - first) * n / (n - 1) in seconds.
  double acquisition_duration() const;

  /// Sorted timestamps of one channel.
  std::vector<std::uint64_t> channel_times(std::uint16_t channel) const;
};

/// Stable ordering used everywhere a stream is (re)sorted.
bool tag_order(const TagRecord& a, const TagRecord& b);

void write_tags(const TagStream& stream, std::ostream& out);
void write_tags(const TagStream& stream, const std::filesystem::path& path);

/// Throws FormatError (bad magic, unsupported version, truncated record,
/// unsorted timestamp, undeclared channel) carrying the byte offset and record index.
TagStream read_tags(std::istream& in);
TagStream read_tags(const std::filesystem::path& path);

/// Time-ordered union of two streams with identical channel declarations.
TagStream merge(const TagStream& a, const TagStream& b);

/// Raw coincidence histogram of delays tB - tA. Bin k holds delays of sign(k)
/// with |tB - tA| in [(|k| - 1/2) w, (|k| + 1/2) w); bin 0 holds |tB - tA| < w/2.
/// Swapping A and B mirrors the counts exactly.
struct Histogram {
  std::int64_t bin_width_ps = 512;
  std::int64_t half_bins = 0;
  std::vector<std::uint64_t> counts;

  std::size_t size() const { return counts.size(); }
  double tau_ps(std::size_t i) const {
    return static_cast<double>((static_cast<std::int64_t>(i) - half_bins) * bin_width_ps);
  }
  std::uint64_t total() const;
  Histogram& operator+=(const Histogram& other);
  friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Empty histogram with the bin layout cross_correlate produces for these settings.
Histogram make_histogram(std::int64_t bin_width_ps, std::int64_t window_ps);

/// Multistop correlation over the full stream, OpenMP-parallel over chunks
/// of channel-A events. For chA == chB self-pairs are excluded.
Histogram cross_correlate(const TagStream& stream, std::uint16_t channel_a, std::uint16_t channel_b,
                          std::int64_t bin_width_ps, std::int64_t window_ps);

/// Single-threaded two-pointer reference for cross_correlate.
Histogram cross_correlate_serial(const TagStream& stream, std::uint16_t channel_a,
                                 std::uint16_t channel_b, std::int64_t bin_width_ps,
                                 std::int64_t window_ps);

/// Timestamp-level kernels the stream overloads delegate to.
Histogram correlate_times(std::span<const std::uint64_t> times_a, std::span<const std::uint64_t> times_b,
                          bool same_channel, std::int64_t bin_width_ps, std::int64_t window_ps);
Histogram correlate_times_serial(std::span<const std::uint64_t> times_a,
                                 std::span<const std::uint64_t> times_b, bool same_channel,
                                 std::int64_t bin_width_ps, std::int64_t window_ps);

struct G2Curve {
  std::vector<double> tau_ps;
  std::vector<double> g2;
  std::vector<double> sigma;
  std::vector<std::uint64_t> counts;
  double bin_width_ps = 0.0;

  std::size_t size() const { return tau_ps.size(); }
  /// Index of the bin centred on zero delay; throws PreconditionError if absent.
  std::size_t zero_bin() const;
};

/// Divides bin counts by rate_a * rate_b * duration * bin_width. Per-bin sigma
/// is sqrt(N)/norm, or 1/norm for empty bins.
G2Curve normalize_g2(const Histogram& raw, double rate_a, double rate_b, double duration_s);

/// Correlates and normalizes using the stream's own singles rates and duration.
G2Curve correlate_and_normalize(const TagStream& stream, std::uint16_t channel_a, std::uint16_t channel_b,
                                std::int64_t bin_width_ps, std::int64_t window_ps);

struct Visibility {
  double value = 0.0;
  double sigma = 0.0;
  double bin_width_ps = 0.0;  // width of the zero-delay bin the value was read from
};

/// V = 1 - g2(0) / reference, with reference taken from the model.
Visibility hom_visibility(const G2Curve& curve, double model_reference);

/// V = 1 - g2(0) / g2_ref(0), with the reference measured in the distinguishable configuration.
Visibility hom_visibility(const G2Curve& curve, const G2Curve& distinguishable_reference);

/// CSV `tau_ps,g2,sigma,counts`.
void write_g2_csv(const G2Curve& curve, std::ostream& out);
void write_g2_csv(const G2Curve& curve, const std::filesystem::path& path);
G2Curve read_g2_csv(std::istream& in);
G2Curve read_g2_csv(const std::filesystem::path& path);

}  // namespace homlab::tags
