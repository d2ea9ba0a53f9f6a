#pragma once

// Measurement effects for the polarisation analyser (QWP -> HWP -> PBS -> two
// detectors) and for the electron interference phase bins.
//
// Jones conventions: angles are fast-axis angles from horizontal in degrees,
// QWP(t) = R(t) diag(1, i) R(-t), HWP(t) = R(t) diag(1, -1) R(-t), and light
// passes the quarter-wave plate first, so the analyser unitary is
// W = HWP(hwp) * QWP(qwp). Detector 1 sits on the |H> port, detector 2 on |V>.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "eptomo/errors.hpp"
#include "eptomo/qmat.hpp"

namespace eptomo {

enum class Waveplate { quarter, half };

struct WaveplateSetting {
  double qwp_deg = 0.0;
  double hwp_deg = 0.0;

  friend bool operator==(const WaveplateSetting&, const WaveplateSetting&) = default;
  friend auto operator<=>(const WaveplateSetting&, const WaveplateSetting&) = default;
};

enum class Detector : int { one = 1, two = 2 };
enum class Side { left, right };

struct PhaseBin {
  int index = 0;
  int count = 0;
  friend bool operator==(const PhaseBin&, const PhaseBin&) = default;
};

using ElectronContext = std::variant<std::monostate, PhaseBin, Side>;

struct EffectLabel {
  WaveplateSetting setting;
  Detector detector = Detector::one;
  ElectronContext context;
};

struct GroupId {
  std::uint32_t value = 0;
  friend auto operator<=>(const GroupId&, const GroupId&) = default;
};

struct MeasurementEffect {
  ComplexMatrix op;
  EffectLabel label;
  GroupId group;
};

struct CountRecord {
  MeasurementEffect effect;
  std::uint64_t count = 0;
};

/// Optional per-detector transmission scale applied to photon effects.
struct DetectorEfficiency {
  double detector1 = 1.0;
  double detector2 = 1.0;

  double operator[](Detector d) const { return d == Detector::one ? detector1 : detector2; }
};

inline constexpr std::array<Detector, 2> kDetectors{Detector::one, Detector::two};

inline int detector_number(Detector d) { return static_cast<int>(d); }

inline Detector detector_from_number(int n) {
  if (n == 1) return Detector::one;
  if (n == 2) return Detector::two;
  throw std::invalid_argument("detector must be 1 or 2, got " + std::to_string(n));
}

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline Eigen::Matrix2cd rotation(double theta_rad) {
  const double c = std::cos(theta_rad);
  const double s = std::sin(theta_rad);
  Eigen::Matrix2cd r;
  r << c, -s, s, c;
  return r;
}

inline Eigen::Matrix2cd waveplate_jones(Waveplate kind, double theta_deg) {
  if (!std::isfinite(theta_deg)) throw std::invalid_argument("waveplate_jones: non-finite angle");
  const double t = deg_to_rad(theta_deg);
  Eigen::Matrix2cd retarder = Eigen::Matrix2cd::Zero();
  retarder(0, 0) = 1.0;
  retarder(1, 1) = kind == Waveplate::quarter ? Complex(0.0, 1.0) : Complex(-1.0, 0.0);
  return rotation(t) * retarder * rotation(-t);
}

inline Eigen::Matrix2cd analyser_unitary(const WaveplateSetting& setting) {
  return waveplate_jones(Waveplate::half, setting.hwp_deg) * waveplate_jones(Waveplate::quarter, setting.qwp_deg);
}

/// E_d = W^dagger P_d W, scaled by the detector transmission.
inline MeasurementEffect photon_effect(const WaveplateSetting& setting, Detector detector,
                                       const DetectorEfficiency& efficiency = {}) {
  if (!std::isfinite(setting.qwp_deg) || !std::isfinite(setting.hwp_deg)) {
    throw std::invalid_argument("photon_effect: non-finite waveplate angle");
  }
  const Eigen::Matrix2cd w = analyser_unitary(setting);
  const int port = detector == Detector::one ? basis::kPhotonH : basis::kPhotonV;
  const Eigen::Vector2cd row = w.row(port).transpose();
  const Eigen::Matrix2cd op = efficiency[detector] * (row.conjugate() * row.transpose());
  return MeasurementEffect{op, EffectLabel{setting, detector, std::monostate{}}, GroupId{}};
}

inline double phase_bin_centre(int index, int bins) {
  return 2.0 * std::numbers::pi * static_cast<double>(index) / static_cast<double>(bins);
}

/// (1/K) v v^dagger with v = (1, e^{i phi}) for phase bin `index` of K.
inline ComplexMatrix electron_phase_bin_effect(int index, int bins) {
  if (bins < 3) throw std::invalid_argument("electron phase effect: need at least 3 phase bins");
  if (index < 0 || index >= bins) throw std::invalid_argument("electron phase effect: bin index out of range");
  const double phi = phase_bin_centre(index, bins);
  Eigen::Vector2cd v(1.0, std::polar(1.0, phi));
  return (v * v.adjoint()) / static_cast<double>(bins);
}

/// Effect for the phase bin centred on phi; phi must be a bin centre 2 pi k / K.
inline MeasurementEffect electron_phase_effect(double phi, int bins) {
  if (bins < 3) throw std::invalid_argument("electron_phase_effect: need at least 3 phase bins");
  const double position = phi * bins / (2.0 * std::numbers::pi);
  const double nearest = std::round(position);
  if (!std::isfinite(phi) || std::abs(position - nearest) > 1e-9 || nearest < 0 || nearest >= bins) {
    throw std::invalid_argument("electron_phase_effect: phi is not a bin centre of the K-partition of [0, 2pi)");
  }
  const int index = static_cast<int>(nearest);
  return MeasurementEffect{electron_phase_bin_effect(index, bins),
                           EffectLabel{{}, Detector::one, PhaseBin{index, bins}}, GroupId{}};
}

inline ComplexMatrix side_projector(Side side) {
  ComplexMatrix p = ComplexMatrix::Zero(2, 2);
  const int k = side == Side::left ? basis::kElectronLeft : basis::kElectronRight;
  p(k, k) = 1.0;
  return p;
}

/// 2K joint effects (detector-major, then phase bin) forming one group.
inline std::vector<MeasurementEffect> joint_effect_set(const WaveplateSetting& setting, int bins, GroupId group = {},
                                                       const DetectorEfficiency& efficiency = {}) {
  if (bins < 3) throw std::invalid_argument("joint_effect_set: need at least 3 phase bins");
  std::vector<MeasurementEffect> out;
  out.reserve(2 * static_cast<std::size_t>(bins));
  for (Detector d : kDetectors) {
    const ComplexMatrix photon = photon_effect(setting, d, efficiency).op;
    for (int k = 0; k < bins; ++k) {
      out.push_back(MeasurementEffect{tensor(electron_phase_bin_effect(k, bins), photon),
                                      EffectLabel{setting, d, PhaseBin{k, bins}}, group});
    }
  }
  return out;
}

/// |side><side| (x) E_d for both detectors; probabilities in this group are
/// conditioned on the electron side.
inline std::vector<MeasurementEffect> scan_effect_set(const WaveplateSetting& setting, Side side, GroupId group = {},
                                                      const DetectorEfficiency& efficiency = {}) {
  std::vector<MeasurementEffect> out;
  out.reserve(2);
  for (Detector d : kDetectors) {
    out.push_back(MeasurementEffect{tensor(side_projector(side), photon_effect(setting, d, efficiency).op),
                                    EffectLabel{setting, d, side}, group});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Settings file: one group per line, "qwp_deg,hwp_deg,context" with context
// "phase:K", "side:L" or "side:R". Blank lines and '#' comments are skipped.

struct PhaseBins {
  int count = 0;
  friend bool operator==(const PhaseBins&, const PhaseBins&) = default;
};

using GroupContext = std::variant<PhaseBins, Side>;

struct SettingsRecord {
  WaveplateSetting setting;
  GroupContext context;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string{} : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline bool is_skippable(const std::string& line) {
  const auto b = line.find_first_not_of(" \t\r");
  return b == std::string::npos || line[b] == '#';
}

inline double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " from '" + text + "'");
  }
}

inline long long parse_integer(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " from '" + text + "'");
  }
}

inline Side parse_side(const std::string& text) {
  if (text == "L") return Side::left;
  if (text == "R") return Side::right;
  throw DataError("side must be L or R, got '" + text + "'");
}

}  // namespace detail

inline const char* side_code(Side s) { return s == Side::left ? "L" : "R"; }

inline GroupContext parse_group_context(const std::string& text) {
  if (text.rfind("phase:", 0) == 0) {
    const long long k = detail::parse_integer(text.substr(6), "phase bin count");
    if (k < 3) throw DataError("phase context needs K >= 3");
    return PhaseBins{static_cast<int>(k)};
  }
  if (text.rfind("side:", 0) == 0) return detail::parse_side(text.substr(5));
  throw DataError("unknown group context '" + text + "'");
}

inline std::string format_group_context(const GroupContext& context) {
  if (const auto* bins = std::get_if<PhaseBins>(&context)) return "phase:" + std::to_string(bins->count);
  return std::string("side:") + side_code(std::get<Side>(context));
}

inline std::vector<SettingsRecord> read_settings(std::istream& is) {
  std::vector<SettingsRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_skippable(line)) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != 3) {
      throw DataError("settings line " + std::to_string(line_no) + ": expected qwp_deg,hwp_deg,context");
    }
    out.push_back(SettingsRecord{
        WaveplateSetting{detail::parse_double(fields[0], "qwp_deg"), detail::parse_double(fields[1], "hwp_deg")},
        parse_group_context(fields[2])});
  }
  return out;
}

inline void write_settings(std::ostream& os, const std::vector<SettingsRecord>& records) {
  const auto old_precision = os.precision(17);
  for (const auto& r : records) {
    os << r.setting.qwp_deg << ',' << r.setting.hwp_deg << ',' << format_group_context(r.context) << '\n';
  }
  os.precision(old_precision);
}

/// Effects for one settings record.
inline std::vector<MeasurementEffect> effect_group(const SettingsRecord& record, GroupId group,
                                                   const DetectorEfficiency& efficiency = {}) {
  if (const auto* bins = std::get_if<PhaseBins>(&record.context)) {
    return joint_effect_set(record.setting, bins->count, group, efficiency);
  }
  return scan_effect_set(record.setting, std::get<Side>(record.context), group, efficiency);
}

// ---------------------------------------------------------------------------
// Count file: one record per line, "qwp_deg,hwp_deg,detector,context,count"
// with context "phase:k/K", "side:L" or "side:R". Records sharing a setting
// and a context kind (phase with the same K, or the same side) form one
// normalisation group, numbered in order of first appearance.

struct CountEntry {
  WaveplateSetting setting;
  Detector detector = Detector::one;
  ElectronContext context;  // PhaseBin or Side
  std::uint64_t count = 0;
};

inline std::string format_electron_context(const ElectronContext& context) {
  if (const auto* bin = std::get_if<PhaseBin>(&context)) {
    return "phase:" + std::to_string(bin->index) + "/" + std::to_string(bin->count);
  }
  if (const auto* side = std::get_if<Side>(&context)) return std::string("side:") + side_code(*side);
  throw std::invalid_argument("count entries need a phase-bin or side context");
}

inline ElectronContext parse_electron_context(const std::string& text) {
  if (text.rfind("phase:", 0) == 0) {
    const auto slash = text.find('/');
    if (slash == std::string::npos) throw DataError("phase context must be phase:k/K, got '" + text + "'");
    const long long k = detail::parse_integer(text.substr(6, slash - 6), "phase bin index");
    const long long n = detail::parse_integer(text.substr(slash + 1), "phase bin count");
    if (n < 3 || k < 0 || k >= n) throw DataError("phase context out of range: '" + text + "'");
    return PhaseBin{static_cast<int>(k), static_cast<int>(n)};
  }
  if (text.rfind("side:", 0) == 0) return detail::parse_side(text.substr(5));
  throw DataError("unknown electron context '" + text + "'");
}

inline std::vector<CountEntry> read_count_entries(std::istream& is) {
  std::vector<CountEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_skippable(line)) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 5) {
      throw DataError("count line " + std::to_string(line_no) + ": expected qwp_deg,hwp_deg,detector,context,count");
    }
    const long long det = detail::parse_integer(f[2], "detector");
    const long long n = detail::parse_integer(f[4], "count");
    if (det != 1 && det != 2) throw DataError("count line " + std::to_string(line_no) + ": detector must be 1 or 2");
    if (n < 0) throw DataError("count line " + std::to_string(line_no) + ": negative count");
    out.push_back(CountEntry{WaveplateSetting{detail::parse_double(f[0], "qwp_deg"), detail::parse_double(f[1], "hwp_deg")},
                             detector_from_number(static_cast<int>(det)), parse_electron_context(f[3]),
                             static_cast<std::uint64_t>(n)});
  }
  return out;
}

inline void write_count_entries(std::ostream& os, const std::vector<CountEntry>& entries) {
  const auto old_precision = os.precision(17);
  for (const auto& e : entries) {
    os << e.setting.qwp_deg << ',' << e.setting.hwp_deg << ',' << detector_number(e.detector) << ','
       << format_electron_context(e.context) << ',' << e.count << '\n';
  }
  os.precision(old_precision);
}

/// Builds 4x4 joint records; groups follow the file-level convention above.
inline std::vector<CountRecord> count_records(const std::vector<CountEntry>& entries,
                                              const DetectorEfficiency& efficiency = {}) {
  struct Key {
    WaveplateSetting setting;
    int kind;  // K for phase bins, -1 / -2 for sides L / R
    auto operator<=>(const Key&) const = default;
  };
  std::vector<std::pair<Key, GroupId>> groups;
  std::vector<CountRecord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Key key{e.setting, 0};
    ComplexMatrix electron;
    if (const auto* bin = std::get_if<PhaseBin>(&e.context)) {
      key.kind = bin->count;
      electron = electron_phase_bin_effect(bin->index, bin->count);
    } else if (const auto* side = std::get_if<Side>(&e.context)) {
      key.kind = *side == Side::left ? -1 : -2;
      electron = side_projector(*side);
    } else {
      throw std::invalid_argument("count_records: entries need a phase-bin or side context");
    }
    GroupId group{static_cast<std::uint32_t>(groups.size())};
    bool found = false;
    for (const auto& [k, g] : groups) {
      if (k == key) {
        group = g;
        found = true;
        break;
      }
    }
    if (!found) groups.emplace_back(key, group);
    const ComplexMatrix op = tensor(electron, photon_effect(e.setting, e.detector, efficiency).op);
    out.push_back(CountRecord{MeasurementEffect{op, EffectLabel{e.setting, e.detector, e.context}, group}, e.count});
  }
  return out;
}

}  // namespace eptomo
