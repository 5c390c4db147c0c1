#include "homlab/tagproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "homlab/errors.hpp"
#include "homlab/parallel.hpp"

namespace homlab::tags {

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'T', 'A', 'G'};

template <typename T>
void put_le(std::uint8_t* dst, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = static_cast<std::uint8_t>(value >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* src) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(src[i]) << (8 * i);
  return value;
}

void check_bins(std::int64_t bin_width_ps, std::int64_t window_ps) {
  if (bin_width_ps <= 0) throw DomainError("bin width must be > 0");
  if (window_ps < bin_width_ps) throw DomainError("window must be >= bin width");
}

// Correlates A events [begin, end) against all of B; j0 is the first B event
// that can fall in the window of A[begin].
void correlate_range(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, bool same,
                     std::size_t begin, std::size_t end, std::int64_t bin_width,
                     std::int64_t half_bins, std::uint64_t* counts) {
  const std::int64_t reach2 = (2 * half_bins + 1) * bin_width;  // window edge, doubled
  const std::int64_t two_w = 2 * bin_width;
  std::size_t j0 = 0;
  if (begin < end) {
    const std::int64_t first = static_cast<std::int64_t>(a[begin]);
    const std::int64_t lowest = first - (reach2 + 1) / 2;
    j0 = static_cast<std::size_t>(
        std::lower_bound(b.begin(), b.end(), static_cast<std::uint64_t>(std::max<std::int64_t>(lowest, 0))) -
        b.begin());
  }
  for (std::size_t i = begin; i < end; ++i) {
    const std::int64_t ta = static_cast<std::int64_t>(a[i]);
    while (j0 < b.size() && 2 * (static_cast<std::int64_t>(b[j0]) - ta) <= -reach2) ++j0;
    for (std::size_t j = j0; j < b.size(); ++j) {
      const std::int64_t d2 = 2 * (static_cast<std::int64_t>(b[j]) - ta);
      if (d2 >= reach2) break;
      if (same && j == i) continue;
      const std::int64_t k = (std::abs(d2) + bin_width) / two_w;
      ++counts[(d2 < 0 ? -k : k) + half_bins];
    }
  }
}

}  // namespace

bool tag_order(const TagRecord& a, const TagRecord& b) {
  if (a.timestamp_ps != b.timestamp_ps) return a.timestamp_ps < b.timestamp_ps;
  if (a.channel != b.channel) return a.channel < b.channel;
  return a.flags < b.flags;
}

void TagStream::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.channel < 1 || r.channel > channel_count) {
      throw PreconditionError("record " + std::to_string(i) + ": channel " + std::to_string(r.channel) +
                              " is not declared");
    }
    if (i > 0 && r.timestamp_ps < records[i - 1].timestamp_ps) {
      throw PreconditionError("record " + std::to_string(i) + ": timestamps not sorted");
    }
  }
}

std::vector<std::uint64_t> TagStream::counts_per_channel() const {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(channel_count) + 1, 0);
  for (const auto& r : records) {
    if (r.channel < counts.size()) ++counts[r.channel];
  }
  return counts;
}

double TagStream::acquisition_duration() const {
  if (duration_s > 0.0) return duration_s;
  if (records.size() < 2) return 0.0;
  const double span = static_cast<double>(records.back().timestamp_ps - records.front().timestamp_ps);
  const double n = static_cast<double>(records.size());
  return span * n / (n - 1.0) * 1e-12;
}

std::vector<std::uint64_t> TagStream::channel_times(std::uint16_t channel) const {
  std::vector<std::uint64_t> out;
  for (const auto& r : records) {
    if (r.channel == channel) out.push_back(r.timestamp_ps);
  }
  return out;
}

void write_tags(const TagStream& stream, std::ostream& out) {
  std::array<std::uint8_t, kHeaderBytes> header{};
  std::memcpy(header.data(), kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(header.data() + 4, kFormatVersion);
  put_le<std::uint16_t>(header.data() + 6, stream.channel_count);
  put_le<std::uint32_t>(header.data() + 8, stream.resolution_ps);
  put_le<std::uint32_t>(header.data() + 12, 0);
  out.write(reinterpret_cast<const char*>(header.data()), header.size());

  constexpr std::size_t kBlock = 4096;
  std::vector<std::uint8_t> buffer(kBlock * kRecordBytes);
  for (std::size_t start = 0; start < stream.records.size(); start += kBlock) {
    const std::size_t n = std::min(kBlock, stream.records.size() - start);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = stream.records[start + i];
      std::uint8_t* p = buffer.data() + i * kRecordBytes;
      put_le<std::uint64_t>(p, r.timestamp_ps);
      put_le<std::uint16_t>(p + 8, r.channel);
      put_le<std::uint16_t>(p + 10, r.flags);
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(n * kRecordBytes));
  }
  if (!out) throw std::runtime_error("write_tags: output stream failure");
}

void write_tags(const TagStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tags(stream, out);
}

TagStream read_tags(std::istream& in) {
  std::array<std::uint8_t, kHeaderBytes> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (static_cast<std::size_t>(in.gcount()) != kHeaderBytes) {
    throw FormatError("tag file: truncated header", static_cast<std::uint64_t>(in.gcount()));
  }
  if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("tag file: bad magic", 0);
  }
  const auto version = get_le<std::uint16_t>(header.data() + 4);
  if (version != kFormatVersion) {
    throw FormatError("tag file: unsupported version " + std::to_string(version), 4);
  }
  TagStream stream;
  stream.channel_count = get_le<std::uint16_t>(header.data() + 6);
  stream.resolution_ps = get_le<std::uint32_t>(header.data() + 8);

  constexpr std::size_t kBlock = 4096;
  std::vector<std::uint8_t> buffer(kBlock * kRecordBytes);
  std::uint64_t index = 0;
  for (;;) {
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    const std::size_t whole = got / kRecordBytes;
    for (std::size_t i = 0; i < whole; ++i, ++index) {
      const std::uint8_t* p = buffer.data() + i * kRecordBytes;
      TagRecord r{get_le<std::uint64_t>(p), get_le<std::uint16_t>(p + 8), get_le<std::uint16_t>(p + 10)};
      const std::uint64_t offset = kHeaderBytes + index * kRecordBytes;
      if (r.channel < 1 || r.channel > stream.channel_count) {
        throw FormatError("tag file: undeclared channel " + std::to_string(r.channel), offset + 8, index);
      }
      if (!stream.records.empty() && r.timestamp_ps < stream.records.back().timestamp_ps) {
        throw FormatError("tag file: timestamp out of order", offset, index);
      }
      stream.records.push_back(r);
    }
    if (got % kRecordBytes != 0) {
      throw FormatError("tag file: truncated record", kHeaderBytes + index * kRecordBytes, index);
    }
    if (got < buffer.size()) break;
  }
  return stream;
}

TagStream read_tags(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tags(in);
}

TagStream merge(const TagStream& a, const TagStream& b) {
  if (a.channel_count != b.channel_count || a.resolution_ps != b.resolution_ps) {
    throw PreconditionError("merge: streams declare different channels or resolution");
  }
  TagStream out;
  out.channel_count = a.channel_count;
  out.resolution_ps = a.resolution_ps;
  out.duration_s = (a.duration_s > 0.0 && b.duration_s > 0.0) ? a.duration_s + b.duration_s : 0.0;
  out.records.resize(a.records.size() + b.records.size());
  std::merge(a.records.begin(), a.records.end(), b.records.begin(), b.records.end(), out.records.begin(),
             tag_order);
  return out;
}

std::uint64_t Histogram::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

Histogram& Histogram::operator+=(const Histogram& other) {
  if (other.bin_width_ps != bin_width_ps || other.half_bins != half_bins) {
    throw PreconditionError("histogram layouts differ");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

Histogram make_histogram(std::int64_t bin_width_ps, std::int64_t window_ps) {
  check_bins(bin_width_ps, window_ps);
  Histogram h;
  h.bin_width_ps = bin_width_ps;
  h.half_bins = window_ps / bin_width_ps;
  h.counts.assign(static_cast<std::size_t>(2 * h.half_bins + 1), 0);
  return h;
}

Histogram correlate_times_serial(std::span<const std::uint64_t> times_a, std::span<const std::uint64_t> times_b,
                                 bool same_channel, std::int64_t bin_width_ps, std::int64_t window_ps) {
  Histogram h = make_histogram(bin_width_ps, window_ps);
  correlate_range(times_a, times_b, same_channel, 0, times_a.size(), bin_width_ps, h.half_bins,
                  h.counts.data());
  return h;
}

Histogram correlate_times(std::span<const std::uint64_t> times_a, std::span<const std::uint64_t> times_b,
                          bool same_channel, std::int64_t bin_width_ps, std::int64_t window_ps) {
  Histogram h = make_histogram(bin_width_ps, window_ps);
  const std::size_t n = times_a.size();
  const int workers = thread_count();
  if (workers <= 1 || n < 4096) {
    correlate_range(times_a, times_b, same_channel, 0, n, bin_width_ps, h.half_bins, h.counts.data());
    return h;
  }
  const std::size_t chunks = static_cast<std::size_t>(workers) * 4;
  const std::size_t nbins = h.counts.size();
  std::vector<std::uint64_t> partial(chunks * nbins, 0);
  const auto nchunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < nchunks; ++c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    correlate_range(times_a, times_b, same_channel, begin, end, bin_width_ps, h.half_bins,
                    partial.data() + c * nbins);
  }
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t k = 0; k < nbins; ++k) h.counts[k] += partial[c * nbins + k];
  }
  return h;
}

namespace {

void check_channels(const TagStream& stream, std::uint16_t a, std::uint16_t b) {
  for (auto ch : {a, b}) {
    if (ch < 1 || ch > stream.channel_count) {
      throw PreconditionError("unknown channel " + std::to_string(ch));
    }
  }
}

}  // namespace

Histogram cross_correlate(const TagStream& stream, std::uint16_t channel_a, std::uint16_t channel_b,
                          std::int64_t bin_width_ps, std::int64_t window_ps) {
  check_channels(stream, channel_a, channel_b);
  const auto ta = stream.channel_times(channel_a);
  if (channel_a == channel_b) return correlate_times(ta, ta, true, bin_width_ps, window_ps);
  const auto tb = stream.channel_times(channel_b);
  return correlate_times(ta, tb, false, bin_width_ps, window_ps);
}

Histogram cross_correlate_serial(const TagStream& stream, std::uint16_t channel_a, std::uint16_t channel_b,
                                 std::int64_t bin_width_ps, std::int64_t window_ps) {
  check_channels(stream, channel_a, channel_b);
  const auto ta = stream.channel_times(channel_a);
  if (channel_a == channel_b) return correlate_times_serial(ta, ta, true, bin_width_ps, window_ps);
  const auto tb = stream.channel_times(channel_b);
  return correlate_times_serial(ta, tb, false, bin_width_ps, window_ps);
}

std::size_t G2Curve::zero_bin() const {
  for (std::size_t i = 0; i < tau_ps.size(); ++i) {
    if (std::abs(tau_ps[i]) < 0.5 * bin_width_ps) return i;
  }
  throw PreconditionError("curve has no zero-delay bin");
}

G2Curve normalize_g2(const Histogram& raw, double rate_a, double rate_b, double duration_s) {
  if (!(duration_s > 0.0)) throw DomainError("normalize_g2: duration must be > 0");
  if (!(rate_a > 0.0) || !(rate_b > 0.0)) throw DomainError("normalize_g2: rates must be > 0");
  const double norm = rate_a * rate_b * duration_s * static_cast<double>(raw.bin_width_ps) * 1e-12;
  G2Curve curve;
  curve.bin_width_ps = static_cast<double>(raw.bin_width_ps);
  curve.tau_ps.resize(raw.size());
  curve.g2.resize(raw.size());
  curve.sigma.resize(raw.size());
  curve.counts = raw.counts;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double n = static_cast<double>(raw.counts[i]);
    curve.tau_ps[i] = raw.tau_ps(i);
    curve.g2[i] = n / norm;
    curve.sigma[i] = (n > 0.0 ? std::sqrt(n) : 1.0) / norm;
  }
  return curve;
}

G2Curve correlate_and_normalize(const TagStream& stream, std::uint16_t channel_a, std::uint16_t channel_b,
                                std::int64_t bin_width_ps, std::int64_t window_ps) {
  const Histogram raw = cross_correlate(stream, channel_a, channel_b, bin_width_ps, window_ps);
  const auto counts = stream.counts_per_channel();
  const double duration = stream.acquisition_duration();
  if (!(duration > 0.0)) throw DomainError("stream duration is zero");
  return normalize_g2(raw, counts[channel_a] / duration, counts[channel_b] / duration, duration);
}

Visibility hom_visibility(const G2Curve& curve, double model_reference) {
  if (!(model_reference > 0.0)) throw DomainError("hom_visibility: reference g2(0) is zero, visibility undefined");
  const std::size_t z = curve.zero_bin();
  return {1.0 - curve.g2[z] / model_reference, curve.sigma[z] / model_reference, curve.bin_width_ps};
}

Visibility hom_visibility(const G2Curve& curve, const G2Curve& distinguishable_reference) {
  const std::size_t z = curve.zero_bin();
  const std::size_t zr = distinguishable_reference.zero_bin();
  const double ref = distinguishable_reference.g2[zr];
  if (!(ref > 0.0)) throw DomainError("hom_visibility: reference g2(0) is zero, visibility undefined");
  const double g = curve.g2[z];
  const double a = curve.sigma[z] / ref;
  const double b = g * distinguishable_reference.sigma[zr] / (ref * ref);
  return {1.0 - g / ref, std::hypot(a, b), curve.bin_width_ps};
}

void write_g2_csv(const G2Curve& curve, std::ostream& out) {
  out << "tau_ps,g2,sigma,counts\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << curve.tau_ps[i] << ',' << curve.g2[i] << ',' << curve.sigma[i] << ',' << curve.counts[i] << '\n';
  }
}

void write_g2_csv(const G2Curve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_g2_csv(curve, out);
}

G2Curve read_g2_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("g2 CSV: missing header", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "tau_ps,g2,sigma,counts") throw FormatError("g2 CSV: unexpected header '" + line + "'", 0);
  std::uint64_t offset = line.size() + 1;
  G2Curve curve;
  std::uint64_t row = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    double tau = 0, g2 = 0, sigma = 0;
    std::uint64_t counts = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    fields >> tau >> c1 >> g2 >> c2 >> sigma >> c3 >> counts;
    if (fields.fail() || c1 != ',' || c2 != ',' || c3 != ',' || g2 < 0.0 || sigma < 0.0 || (counts > 0 && !(sigma > 0.0))) {
      throw FormatError("g2 CSV: malformed row", line_offset, row);
    }
    curve.tau_ps.push_back(tau);
    curve.g2.push_back(g2);
    curve.sigma.push_back(sigma);
    curve.counts.push_back(counts);
    ++row;
  }
  if (curve.size() >= 2) {
    curve.bin_width_ps = curve.tau_ps[1] - curve.tau_ps[0];
    for (std::size_t i = 1; i < curve.size(); ++i) {
      const double step = curve.tau_ps[i] - curve.tau_ps[i - 1];
      if (std::abs(step - curve.bin_width_ps) > 1e-6 * std::abs(curve.bin_width_ps) || step <= 0.0) {
        throw FormatError("g2 CSV: bins are not uniform", offset, i);
      }
    }
  }
  return curve;
}

G2Curve read_g2_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_g2_csv(in);
}

}  // namespace homlab::tags
