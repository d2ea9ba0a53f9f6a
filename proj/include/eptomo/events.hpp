#pragma once

// Electron-photon coincidence processing: time-difference histograms,
// coincidence windows, gated detector patterns with accidental-background
// subtraction, and fringe extraction / sinusoidal fits.
//
// Time differences are photon minus electron, in integer picoseconds.
// Patterns are Eigen::MatrixXd indexed (row = y pixel, col = x pixel); an event
// at continuous position (x, y) lands in pixel (floor(y), floor(x)).

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eptomo/detail/nelder_mead.hpp"
#include "eptomo/diagnostics.hpp"
#include "eptomo/errors.hpp"
#include "eptomo/polopt.hpp"

namespace eptomo {

enum class Channel { electron, photon1, photon2 };

struct DetectionEvent {
  Channel channel = Channel::electron;
  std::int64_t t_ps = 0;
  std::optional<double> x;
  std::optional<double> y;
};

inline const char* channel_code(Channel c) {
  switch (c) {
    case Channel::electron: return "e";
    case Channel::photon1: return "p1";
    case Channel::photon2: return "p2";
  }
  return "?";
}

inline Channel photon_channel(Detector d) { return d == Detector::one ? Channel::photon1 : Channel::photon2; }

struct EventStreams {
  std::vector<DetectionEvent> electrons;
  std::vector<DetectionEvent> photon1;
  std::vector<DetectionEvent> photon2;

  const std::vector<DetectionEvent>& photons(Detector d) const { return d == Detector::one ? photon1 : photon2; }
  std::vector<DetectionEvent>& photons(Detector d) { return d == Detector::one ? photon1 : photon2; }
};

inline bool is_time_sorted(std::span<const DetectionEvent> events) {
  return std::is_sorted(events.begin(), events.end(),
                        [](const DetectionEvent& a, const DetectionEvent& b) { return a.t_ps < b.t_ps; });
}

inline void sort_by_time(std::vector<DetectionEvent>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const DetectionEvent& a, const DetectionEvent& b) { return a.t_ps < b.t_ps; });
}

/// Splits a mixed event list by channel and sorts each stream by time.
inline EventStreams split_streams(std::span<const DetectionEvent> events) {
  EventStreams s;
  for (const auto& e : events) {
    switch (e.channel) {
      case Channel::electron: s.electrons.push_back(e); break;
      case Channel::photon1: s.photon1.push_back(e); break;
      case Channel::photon2: s.photon2.push_back(e); break;
    }
  }
  sort_by_time(s.electrons);
  sort_by_time(s.photon1);
  sort_by_time(s.photon2);
  return s;
}

// Event file: "channel,t_ps[,x,y]" with channel e, p1 or p2.

inline std::vector<DetectionEvent> read_events(std::istream& is) {
  std::vector<DetectionEvent> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_skippable(line)) continue;
    const auto f = detail::split_csv(line);
    const std::string where = "event line " + std::to_string(line_no);
    if (f.size() != 2 && f.size() != 4) throw DataError(where + ": expected channel,t_ps[,x,y]");
    DetectionEvent e;
    if (f[0] == "e") {
      e.channel = Channel::electron;
    } else if (f[0] == "p1") {
      e.channel = Channel::photon1;
    } else if (f[0] == "p2") {
      e.channel = Channel::photon2;
    } else {
      throw DataError(where + ": unknown channel '" + f[0] + "'");
    }
    e.t_ps = detail::parse_integer(f[1], "t_ps");
    if (e.t_ps < 0) throw DataError(where + ": negative timestamp");
    if (f.size() == 4) {
      if (e.channel != Channel::electron) throw DataError(where + ": only electron events carry coordinates");
      e.x = detail::parse_double(f[2], "x");
      e.y = detail::parse_double(f[3], "y");
    }
    out.push_back(e);
  }
  return out;
}

inline void write_events(std::ostream& os, std::span<const DetectionEvent> events) {
  const auto old_precision = os.precision(10);
  for (const auto& e : events) {
    os << channel_code(e.channel) << ',' << e.t_ps;
    if (e.x && e.y) os << ',' << *e.x << ',' << *e.y;
    os << '\n';
  }
  os.precision(old_precision);
}

/// Merges the three streams into one time-ordered list (electrons first on ties).
inline std::vector<DetectionEvent> merge_streams(const EventStreams& s) {
  std::vector<DetectionEvent> all;
  all.reserve(s.electrons.size() + s.photon1.size() + s.photon2.size());
  all.insert(all.end(), s.electrons.begin(), s.electrons.end());
  all.insert(all.end(), s.photon1.begin(), s.photon1.end());
  all.insert(all.end(), s.photon2.begin(), s.photon2.end());
  sort_by_time(all);
  return all;
}

// ---------------------------------------------------------------------------
// Time-difference histogram.

struct CoincidenceHistogram {
  std::int64_t bin_width_ps = 0;
  std::int64_t lo_ps = 0;  // lower edge of bin 0
  std::vector<std::uint64_t> counts;

  std::int64_t edge(std::size_t k) const { return lo_ps + static_cast<std::int64_t>(k) * bin_width_ps; }
  double centre(std::size_t k) const { return static_cast<double>(edge(k)) + 0.5 * static_cast<double>(bin_width_ps); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

namespace detail {

inline void require_sorted(std::span<const DetectionEvent> events, const char* what) {
  if (!is_time_sorted(events)) throw DataError(std::string(what) + " stream is not sorted by time");
}

/// Calls f(electron_index, photon_index, dt) for every pair with
/// lo <= t_photon - t_electron <= hi. Linear in events plus pairs.
template <typename F>
void for_each_pair(std::span<const DetectionEvent> electrons, std::span<const DetectionEvent> photons, std::int64_t lo,
                   std::int64_t hi, F&& f) {
  std::size_t first = 0;
  for (std::size_t p = 0; p < photons.size(); ++p) {
    const std::int64_t tp = photons[p].t_ps;
    // electrons with t_e >= tp - hi
    while (first < electrons.size() && electrons[first].t_ps < tp - hi) ++first;
    for (std::size_t e = first; e < electrons.size(); ++e) {
      const std::int64_t dt = tp - electrons[e].t_ps;
      if (dt < lo) break;
      f(e, p, dt);
    }
  }
}

}  // namespace detail

/// Histogram of photon - electron time differences in whole bins from -range,
/// covering at least [-range, +range].
inline CoincidenceHistogram coincidence_histogram(std::span<const DetectionEvent> electrons,
                                                  std::span<const DetectionEvent> photons, std::int64_t bin_width_ps,
                                                  std::int64_t range_ps) {
  if (bin_width_ps <= 0) throw std::invalid_argument("coincidence_histogram: bin width must be positive");
  if (range_ps <= 0) throw std::invalid_argument("coincidence_histogram: range must be positive");
  detail::require_sorted(electrons, "electron");
  detail::require_sorted(photons, "photon");
  CoincidenceHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.lo_ps = -range_ps;
  const auto bins = static_cast<std::size_t>(2 * range_ps / bin_width_ps + 1);
  h.counts.assign(bins, 0);
  const std::int64_t hi = h.edge(bins) - 1;
  detail::for_each_pair(electrons, photons, h.lo_ps, hi, [&h, bin_width_ps](std::size_t, std::size_t, std::int64_t dt) {
    const auto k = static_cast<std::size_t>((dt - h.lo_ps) / bin_width_ps);
    if (k < h.counts.size()) h.counts[k]++;
  });
  return h;
}

struct CoincidenceWindow {
  std::int64_t lo_ps = 0;
  std::int64_t hi_ps = 0;  // exclusive upper edge
  double background = 0.0;  // mean accidental counts per bin
  double peak = 0.0;        // counts in the maximum bin
  std::size_t peak_bin = 0;

  std::int64_t width_ps() const { return hi_ps - lo_ps; }
  /// (peak - background) / background
  double snr() const {
    return background > 0.0 ? (peak - background) / background : std::numeric_limits<double>::infinity();
  }
};

/// Mean accidental level per bin: the mean of the bins that survive iterative
/// clipping at mean + 5 sqrt(mean).
inline double histogram_background(const CoincidenceHistogram& hist) {
  if (hist.counts.empty()) throw std::invalid_argument("histogram_background: empty histogram");
  double mean = 0.0;
  for (auto c : hist.counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(hist.counts.size());
  for (int iter = 0; iter < 50; ++iter) {
    const double cut = mean + 5.0 * std::sqrt(std::max(mean, 1.0));
    double sum = 0.0;
    std::size_t n = 0;
    for (auto c : hist.counts) {
      if (static_cast<double>(c) <= cut) {
        sum += static_cast<double>(c);
        ++n;
      }
    }
    const double next = n > 0 ? sum / static_cast<double>(n) : 0.0;
    if (next == mean) break;
    mean = next;
  }
  return mean;
}

/// Window around the maximum bin, grown while neighbouring bins exceed
/// background + 3 sqrt(background).
inline CoincidenceWindow find_coincidence_window(const CoincidenceHistogram& hist) {
  if (hist.counts.empty()) throw std::invalid_argument("find_coincidence_window: empty histogram");
  const double bg = histogram_background(hist);
  const auto peak_it = std::max_element(hist.counts.begin(), hist.counts.end());
  const auto peak = static_cast<std::size_t>(peak_it - hist.counts.begin());
  const double peak_value = static_cast<double>(*peak_it);
  if (!(peak_value > bg + 5.0 * std::sqrt(bg)) || peak_value <= 0.0) {
    throw NumericalError("no coincidence peak: maximum bin does not exceed background + 5 sigma");
  }
  const double threshold = bg + 3.0 * std::sqrt(bg);
  std::size_t lo = peak;
  std::size_t hi = peak;
  while (lo > 0 && static_cast<double>(hist.counts[lo - 1]) > threshold) --lo;
  while (hi + 1 < hist.counts.size() && static_cast<double>(hist.counts[hi + 1]) > threshold) ++hi;
  CoincidenceWindow w;
  w.lo_ps = hist.edge(lo);
  w.hi_ps = hist.edge(hi + 1);
  w.background = bg;
  w.peak = peak_value;
  w.peak_bin = peak;
  return w;
}

struct TimeWindow {
  std::int64_t lo_ps = 0;
  std::int64_t hi_ps = 0;  // exclusive
};

/// `count` windows of the coincidence-window width on the positive side of
/// the peak, separated by one width: [lo + 2kw, hi + 2kw), k = 1..count.
inline std::vector<TimeWindow> background_windows(const CoincidenceWindow& window, int count = 10) {
  if (count < 1) throw std::invalid_argument("background_windows: count must be >= 1");
  const std::int64_t w = window.width_ps();
  std::vector<TimeWindow> out;
  for (int k = 1; k <= count; ++k) out.push_back(TimeWindow{window.lo_ps + 2 * k * w, window.hi_ps + 2 * k * w});
  return out;
}

inline bool overlaps(const TimeWindow& a, const TimeWindow& b) { return a.lo_ps < b.hi_ps && b.lo_ps < a.hi_ps; }

/// Throws if a background window overlaps the coincidence window or another
/// background window.
inline void check_background_windows(const TimeWindow& signal, std::span<const TimeWindow> background) {
  for (std::size_t i = 0; i < background.size(); ++i) {
    if (background[i].hi_ps <= background[i].lo_ps) throw DataError("background window has non-positive width");
    if (overlaps(signal, background[i])) throw DataError("background window overlaps the coincidence window");
    for (std::size_t j = i + 1; j < background.size(); ++j) {
      if (overlaps(background[i], background[j])) throw DataError("background windows overlap each other");
    }
  }
}

// ---------------------------------------------------------------------------
// Gated patterns.

using Pattern = Eigen::MatrixXd;

struct PatternShape {
  int width = 256;
  int height = 256;
};

/// Spatial pattern of electrons paired with a photon inside [lo, hi). Every
/// electron-photon pair contributes once.
inline Pattern gated_pattern(std::span<const DetectionEvent> electrons, std::span<const DetectionEvent> photons,
                             const TimeWindow& window, const PatternShape& shape) {
  if (shape.width < 1 || shape.height < 1) throw std::invalid_argument("gated_pattern: empty pattern shape");
  detail::require_sorted(electrons, "electron");
  detail::require_sorted(photons, "photon");
  Pattern p = Pattern::Zero(shape.height, shape.width);
  detail::for_each_pair(electrons, photons, window.lo_ps, window.hi_ps - 1, [&](std::size_t e, std::size_t, std::int64_t) {
    const auto& ev = electrons[e];
    if (!ev.x || !ev.y) throw DataError("gated electron event has no coordinates");
    const auto ix = static_cast<long>(std::floor(*ev.x));
    const auto iy = static_cast<long>(std::floor(*ev.y));
    if (ix >= 0 && iy >= 0 && ix < shape.width && iy < shape.height) p(iy, ix) += 1.0;
  });
  return p;
}

/// pattern - mean(background patterns). Negative values are kept.
inline Pattern background_subtract(const Pattern& pattern, std::span<const Pattern> background) {
  if (background.empty()) return pattern;
  Pattern mean = Pattern::Zero(pattern.rows(), pattern.cols());
  for (const auto& b : background) {
    if (b.rows() != pattern.rows() || b.cols() != pattern.cols()) {
      throw std::invalid_argument("background_subtract: pattern shapes differ");
    }
    mean += b;
  }
  mean /= static_cast<double>(background.size());
  return pattern - mean;
}

/// Gates the coincidence window and the background windows and subtracts.
inline Pattern background_subtract(std::span<const DetectionEvent> electrons, std::span<const DetectionEvent> photons,
                                   const TimeWindow& signal, std::span<const TimeWindow> background,
                                   const PatternShape& shape) {
  check_background_windows(signal, background);
  std::vector<Pattern> bg;
  for (const auto& w : background) bg.push_back(gated_pattern(electrons, photons, w, shape));
  return background_subtract(gated_pattern(electrons, photons, signal, shape), bg);
}

// ---------------------------------------------------------------------------
// Fringe geometry and phase histograms.

/// Fringe wave vector in cycles per pixel, chosen in the half plane
/// kx > 0 (or kx = 0, ky > 0). Phase increases along (kx, ky) and is zero at
/// the image centre.
struct FringeGeometry {
  double kx = 0.0;
  double ky = 0.0;
  double peak_ratio = 0.0;  // Fourier peak over median non-DC magnitude

  double frequency() const { return std::hypot(kx, ky); }
  double period_px() const { return 1.0 / frequency(); }
  double angle_rad() const { return std::atan2(ky, kx); }
};

namespace detail {

inline Pattern hann_windowed(const Pattern& p) {
  const double mean = p.mean();
  Pattern out(p.rows(), p.cols());
  const auto hann = [](Eigen::Index i, Eigen::Index n) {
    return n > 1 ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1))
                 : 1.0;
  };
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) out(r, c) = (p(r, c) - mean) * hann(r, p.rows()) * hann(c, p.cols());
  }
  return out;
}

/// |sum_{y,x} w(y,x) exp(-2 pi i (kx x + ky y))|
inline double dtft_magnitude(const Pattern& w, double kx, double ky) {
  Complex total(0.0, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<Complex> ex(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index c = 0; c < w.cols(); ++c) ex[static_cast<std::size_t>(c)] = std::polar(1.0, -two_pi * kx * c);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    Complex row(0.0, 0.0);
    for (Eigen::Index c = 0; c < w.cols(); ++c) row += w(r, c) * ex[static_cast<std::size_t>(c)];
    total += row * std::polar(1.0, -two_pi * ky * r);
  }
  return std::abs(total);
}

}  // namespace detail

/// Dominant non-DC spatial frequency: FFT peak search, then simplex refinement
/// of the windowed DTFT magnitude.
inline FringeGeometry estimate_fringe_geometry(const Pattern& pattern) {
  const auto rows = static_cast<int>(pattern.rows());
  const auto cols = static_cast<int>(pattern.cols());
  if (rows < 8 || cols < 8) throw std::invalid_argument("estimate_fringe_geometry: pattern too small");
  if (!pattern.allFinite()) throw std::invalid_argument("estimate_fringe_geometry: non-finite pattern");
  const Pattern w = detail::hann_windowed(pattern);

  // Row-major copy for FFTW.
  std::vector<double> in(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) in[static_cast<std::size_t>(r) * cols + c] = w(r, c);
  }
  const int half = cols / 2 + 1;
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(rows) * half);
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_2d(rows, cols, in.data(), out, FFTW_ESTIMATE);
  }
  fftw_execute(plan);

  std::vector<double> mags;
  mags.reserve(static_cast<std::size_t>(rows) * half);
  double best = -1.0;
  int best_r = 0;
  int best_c = 0;
  for (int r = 0; r < rows; ++r) {
    const int fy = r <= rows / 2 ? r : r - rows;
    for (int c = 0; c < half; ++c) {
      if (c == 0 && fy <= 0) continue;  // DC and the mirrored half of the kx = 0 column
      const auto* z = out[static_cast<std::size_t>(r) * half + c];
      const double m = std::hypot(z[0], z[1]);
      mags.push_back(m);
      if (m > best) {
        best = m;
        best_r = fy;
        best_c = c;
      }
    }
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(out);

  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2), mags.end());
  const double median = mags[mags.size() / 2];
  if (!(best > 5.0 * median) || best <= 0.0) {
    throw NumericalError("no fringe: Fourier peak does not exceed 5x the median magnitude");
  }

  const double kx0 = static_cast<double>(best_c) / cols;
  const double ky0 = static_cast<double>(best_r) / rows;
  detail::SimplexOptions opt;
  opt.initial_step = 0.25 / std::max(rows, cols);
  opt.size_tolerance = 1e-10;
  const auto r = detail::nelder_mead(
      [&w](const std::vector<double>& k) { return -detail::dtft_magnitude(w, k[0], k[1]); }, {kx0, ky0}, opt);
  FringeGeometry g;
  g.kx = r.x[0];
  g.ky = r.x[1];
  // The refinement must stay on the peak it started from.
  if (std::hypot(g.kx - kx0, g.ky - ky0) > 2.0 / std::min(rows, cols)) {
    g.kx = kx0;
    g.ky = ky0;
  }
  if (g.kx < 0.0 || (g.kx == 0.0 && g.ky < 0.0)) {
    g.kx = -g.kx;
    g.ky = -g.ky;
  }
  g.peak_ratio = median > 0.0 ? best / median : std::numeric_limits<double>::infinity();
  return g;
}

/// Counts per phase bin; bin k is centred on 2 pi k / K.
struct PhaseHistogram {
  std::vector<double> values;

  int bins() const { return static_cast<int>(values.size()); }
  double centre(int k) const { return phase_bin_centre(k, bins()); }
  double total() const {
    double t = 0.0;
    for (double v : values) t += v;
    return t;
  }
};

namespace detail {

inline double bilinear(const Pattern& p, double x, double y, bool& valid) {
  const double max_x = static_cast<double>(p.cols() - 1);
  const double max_y = static_cast<double>(p.rows() - 1);
  if (x < 0.0 || y < 0.0 || x > max_x || y > max_y) {
    valid = false;
    return 0.0;
  }
  valid = true;
  const auto x0 = std::min(static_cast<Eigen::Index>(x), p.cols() - 2 < 0 ? 0 : p.cols() - 2);
  const auto y0 = std::min(static_cast<Eigen::Index>(y), p.rows() - 2 < 0 ? 0 : p.rows() - 2);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const auto x1 = std::min(x0 + 1, p.cols() - 1);
  const auto y1 = std::min(y0 + 1, p.rows() - 1);
  return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
}

}  // namespace detail

/// Rotates the pattern (bilinear resampling about the image centre) so the
/// fringe wave vector points along +x.
inline Pattern align_fringes(const Pattern& pattern, const FringeGeometry& g, Pattern* coverage = nullptr) {
  const double cx = 0.5 * static_cast<double>(pattern.cols() - 1);
  const double cy = 0.5 * static_cast<double>(pattern.rows() - 1);
  const double c = std::cos(g.angle_rad());
  const double s = std::sin(g.angle_rad());
  Pattern out = Pattern::Zero(pattern.rows(), pattern.cols());
  if (coverage) *coverage = Pattern::Zero(pattern.rows(), pattern.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index col = 0; col < out.cols(); ++col) {
      const double u = static_cast<double>(col) - cx;
      const double v = static_cast<double>(r) - cy;
      bool valid = false;
      const double val = detail::bilinear(pattern, cx + u * c - v * s, cy + u * s + v * c, valid);
      if (valid) {
        out(r, col) = val;
        if (coverage) (*coverage)(r, col) = 1.0;
      }
    }
  }
  return out;
}

/// Aligns the fringes, sums columns and deposits each column into the two
/// nearest phase bins with linear weights. Bin contents are normalised by the
/// deposited pixel coverage and rescaled so the total count is preserved.
inline PhaseHistogram extract_fringe(const Pattern& pattern, const FringeGeometry& g, int bins) {
  if (bins < 3) throw std::invalid_argument("extract_fringe: need at least 3 phase bins");
  if (!(g.frequency() > 0.0)) throw std::invalid_argument("extract_fringe: zero fringe frequency");
  Pattern coverage;
  const Pattern aligned = align_fringes(pattern, g, &coverage);
  const double cx = 0.5 * static_cast<double>(pattern.cols() - 1);
  const double period = g.period_px();
  std::vector<double> sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> cov(static_cast<std::size_t>(bins), 0.0);
  for (Eigen::Index col = 0; col < aligned.cols(); ++col) {
    const double weight = coverage.col(col).sum();
    if (weight <= 0.0) continue;
    const double column = aligned.col(col).sum();
    double cycles = (static_cast<double>(col) - cx) / period;
    cycles -= std::floor(cycles);
    const double pos = cycles * bins;
    const auto k0 = static_cast<int>(std::floor(pos)) % bins;
    const double f = pos - std::floor(pos);
    const int k1 = (k0 + 1) % bins;
    sum[static_cast<std::size_t>(k0)] += (1.0 - f) * column;
    sum[static_cast<std::size_t>(k1)] += f * column;
    cov[static_cast<std::size_t>(k0)] += (1.0 - f) * weight;
    cov[static_cast<std::size_t>(k1)] += f * weight;
  }
  PhaseHistogram h;
  h.values.resize(static_cast<std::size_t>(bins));
  double total = 0.0;
  double density_total = 0.0;
  for (int k = 0; k < bins; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (cov[i] <= 0.0) throw NumericalError("extract_fringe: phase bin " + std::to_string(k) + " has no pixel coverage");
    h.values[i] = sum[i] / cov[i];
    total += sum[i];
    density_total += h.values[i];
  }
  if (!(density_total > 0.0)) throw NumericalError("extract_fringe: non-positive fringe total");
  for (auto& v : h.values) v *= total / density_total;
  return h;
}

inline PhaseHistogram extract_fringe(const Pattern& pattern, int bins) {
  return extract_fringe(pattern, estimate_fringe_geometry(pattern), bins);
}

struct FringeResult {
  double amplitude = 0.0;   // A
  double visibility = 0.0;  // V
  double phase = 0.0;       // phi0 in [0, 2 pi)
  double residual_rms = 0.0;
};

/// Least-squares fit of y = A (1 + V cos(phi + phi0)) through the linear model
/// c0 + c1 cos(phi) + c2 sin(phi).
inline FringeResult fit_fringe(const PhaseHistogram& hist) {
  const int n = hist.bins();
  if (n < 8) throw std::invalid_argument("fit_fringe: need at least 8 phase bins");
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd y(n);
  for (int k = 0; k < n; ++k) {
    const double phi = hist.centre(k);
    design(k, 0) = 1.0;
    design(k, 1) = std::cos(phi);
    design(k, 2) = std::sin(phi);
    y(k) = hist.values[static_cast<std::size_t>(k)];
  }
  if (!y.allFinite()) throw DataError("fit_fringe: non-finite histogram values");
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < 3) throw NumericalError("fit_fringe: degenerate design matrix");
  const Eigen::Vector3d c = qr.solve(y);
  FringeResult r;
  r.amplitude = c(0);
  if (!(c(0) > 0.0)) throw NumericalError("fit_fringe: non-positive mean level");
  const double modulation = std::hypot(c(1), c(2));
  r.visibility = modulation / c(0);
  r.phase = modulation > 0.0 ? std::atan2(-c(2), c(1)) : 0.0;
  if (r.phase < 0.0) r.phase += 2.0 * std::numbers::pi;
  r.residual_rms = std::sqrt((design * c - y).squaredNorm() / n);
  return r;
}

/// phase_b - phase_a in cycles, wrapped to [-0.5, 0.5).
inline double phase_difference_cycles(double phase_a, double phase_b) {
  double d = (phase_b - phase_a) / (2.0 * std::numbers::pi);
  d -= std::floor(d + 0.5);
  return d;
}

// ---------------------------------------------------------------------------
// Whole-dataset pipeline for one waveplate setting.

struct PipelineOptions {
  std::int64_t bin_width_ps = 1562;
  std::int64_t range_ps = 500'000;
  int phase_bins = 64;
  int background_window_count = 10;
  PatternShape shape;
  std::array<std::optional<TimeWindow>, 2> window_override;  // per detector
};

struct DetectorResult {
  CoincidenceHistogram histogram;
  CoincidenceWindow window;
  std::vector<TimeWindow> background;
  Pattern raw;
  Pattern corrected;
  PhaseHistogram fringe;
  FringeResult fit;
};

struct PipelineResult {
  FringeGeometry geometry;
  std::array<DetectorResult, 2> detectors;

  const DetectorResult& operator[](Detector d) const { return detectors[d == Detector::one ? 0 : 1]; }
  /// Fringe phase of detector 2 relative to detector 1, in cycles.
  double relative_phase_cycles() const { return phase_difference_cycles(detectors[0].fit.phase, detectors[1].fit.phase); }
};

/// Windows and background per detector; fringe orientation from the summed
/// detector 1 + detector 2 pattern, applied to both.
inline PipelineResult run_pipeline(const EventStreams& streams, const PipelineOptions& options = {}) {
  PipelineResult out;
  for (Detector d : kDetectors) {
    auto& r = out.detectors[d == Detector::one ? 0 : 1];
    const auto& photons = streams.photons(d);
    r.histogram = coincidence_histogram(streams.electrons, photons, options.bin_width_ps, options.range_ps);
    if (const auto& ov = options.window_override[d == Detector::one ? 0 : 1]) {
      r.window.lo_ps = ov->lo_ps;
      r.window.hi_ps = ov->hi_ps;
      r.window.background = histogram_background(r.histogram);
    } else {
      r.window = find_coincidence_window(r.histogram);
    }
    r.background = background_windows(r.window, options.background_window_count);
    const TimeWindow signal{r.window.lo_ps, r.window.hi_ps};
    check_background_windows(signal, r.background);
    r.raw = gated_pattern(streams.electrons, photons, signal, options.shape);
    r.corrected = background_subtract(streams.electrons, photons, signal, r.background, options.shape);
  }
  out.geometry = estimate_fringe_geometry(out.detectors[0].corrected + out.detectors[1].corrected);
  for (auto& r : out.detectors) {
    r.fringe = extract_fringe(r.corrected, out.geometry, options.phase_bins);
    r.fit = fit_fringe(r.fringe);
  }
  return out;
}

/// Joint-effect count entries from a pipeline run: background-subtracted phase
/// histograms rounded to non-negative integers.
inline std::vector<CountEntry> pipeline_count_entries(const PipelineResult& result, const WaveplateSetting& setting) {
  std::vector<CountEntry> out;
  for (Detector d : kDetectors) {
    const auto& h = result[d].fringe;
    for (int k = 0; k < h.bins(); ++k) {
      const double v = std::max(0.0, std::round(h.values[static_cast<std::size_t>(k)]));
      out.push_back(CountEntry{setting, d, PhaseBin{k, h.bins()}, static_cast<std::uint64_t>(v)});
    }
  }
  return out;
}

}  // namespace eptomo
