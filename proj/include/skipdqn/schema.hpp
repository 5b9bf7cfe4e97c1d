#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skipdqn/record.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

// Feature taxonomy: user behaviour, context, content.
enum class Group { UB, CX, CN };

enum class FType { RE, RS, PA, SC, PS, SL, SP, HD, PT, PR, SH, TR };

enum class Encoding { NumericStandardized, NumericRaw, Boolean, OneHot };

// Which RawRecord field a descriptor reads.
enum class Field {
  ReasonStart,
  ReasonEnd,
  NoPause,
  ShortPause,
  LongPause,
  SeekFwd,
  SeekBack,
  ContextSwitch,
  SessionLength,
  SessionPosition,
  HourOfDay,
  ContextType,
  Premium,
  Shuffle,
  Track,
};

inline constexpr std::array<FType, 12> kAllFTypes = {
    FType::RE, FType::RS, FType::PA, FType::SC, FType::PS, FType::SL,
    FType::SP, FType::HD, FType::PT, FType::PR, FType::SH, FType::TR};

inline Group group_of(FType t) {
  switch (t) {
    case FType::RE:
    case FType::RS:
    case FType::PA:
    case FType::SC:
    case FType::PS:
      return Group::UB;
    case FType::SL:
    case FType::SP:
    case FType::HD:
    case FType::PT:
    case FType::PR:
    case FType::SH:
      return Group::CX;
    case FType::TR:
      return Group::CN;
  }
  return Group::CN;
}

inline std::string_view to_string(Group g) {
  switch (g) {
    case Group::UB: return "UB";
    case Group::CX: return "CX";
    case Group::CN: return "CN";
  }
  return "?";
}

inline std::string_view to_string(FType t) {
  static constexpr std::array<std::string_view, 12> names = {
      "RE", "RS", "PA", "SC", "PS", "SL", "SP", "HD", "PT", "PR", "SH", "TR"};
  return names[static_cast<std::size_t>(t)];
}

inline std::optional<FType> parse_ftype(std::string_view s) {
  for (FType t : kAllFTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::NumericStandardized: return "numeric-standardized";
    case Encoding::NumericRaw: return "numeric-raw";
    case Encoding::Boolean: return "boolean";
    case Encoding::OneHot: return "one-hot";
  }
  return "?";
}

inline Encoding parse_encoding(std::string_view s) {
  for (Encoding e : {Encoding::NumericStandardized, Encoding::NumericRaw,
                     Encoding::Boolean, Encoding::OneHot})
    if (to_string(e) == s) return e;
  throw Error("unknown encoding '" + std::string(s) + "'");
}

// "user_collection" -> "User Collection"
inline std::string title_case(std::string_view raw) {
  std::string out;
  bool start = true;
  for (char c : raw) {
    if (c == '_') {
      out.push_back(' ');
      start = true;
    } else {
      out.push_back(start ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c);
      start = false;
    }
  }
  return out;
}

struct FeatureDescriptor {
  std::string name;
  std::string label;
  FType ftype = FType::TR;
  Encoding encoding = Encoding::NumericRaw;
  Field field = Field::Track;
  std::size_t track_index = 0;
  // One-hot only. Unseen values land in categories[fallback].
  std::vector<std::string> categories;
  std::size_t fallback = 0;

  Group group() const { return group_of(ftype); }
  std::size_t width() const { return encoding == Encoding::OneHot ? categories.size() : 1; }
};

struct Standardization {
  double mean = 0.0;
  double stddev = 1.0;
  bool fitted = false;
};

struct StateVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  std::span<const double> view() const { return values; }
  friend bool operator==(const StateVector&, const StateVector&) = default;
};

// Ordered feature layout with per-descriptor activity and fitted statistics.
// Copies are cheap enough to treat schemas as values; masking returns a new
// schema rather than mutating.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::string descriptor_set, std::vector<FeatureDescriptor> descriptors)
      : descriptor_set_(std::move(descriptor_set)),
        descriptors_(std::move(descriptors)),
        standardization_(descriptors_.size()),
        active_(descriptors_.size(), true) {}

  const std::string& descriptor_set() const { return descriptor_set_; }
  const std::vector<FeatureDescriptor>& descriptors() const { return descriptors_; }
  const FeatureDescriptor& descriptor(std::size_t i) const { return descriptors_.at(i); }
  std::size_t size() const { return descriptors_.size(); }

  bool active(std::size_t i) const { return active_.at(i); }
  void set_active(std::size_t i, bool on) { active_.at(i) = on; }

  const Standardization& standardization(std::size_t i) const { return standardization_.at(i); }
  void set_standardization(std::size_t i, Standardization s) { standardization_.at(i) = s; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < descriptors_.size(); ++i)
      if (descriptors_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t active_width() const {
    std::size_t w = 0;
    for (std::size_t i = 0; i < descriptors_.size(); ++i)
      if (active_[i]) w += descriptors_[i].width();
    return w;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
  }

  // Offset of each active descriptor's segment within the encoded state.
  std::vector<std::optional<std::size_t>> offsets() const {
    std::vector<std::optional<std::size_t>> out(descriptors_.size());
    std::size_t at = 0;
    for (std::size_t i = 0; i < descriptors_.size(); ++i) {
      if (!active_[i]) continue;
      out[i] = at;
      at += descriptors_[i].width();
    }
    return out;
  }

  bool fitted() const {
    for (std::size_t i = 0; i < descriptors_.size(); ++i)
      if (descriptors_[i].encoding == Encoding::NumericStandardized &&
          !standardization_[i].fitted)
        return false;
    return true;
  }

  // Stable identity of the encoded layout: order, encodings, categories,
  // activity and fitted statistics.
  std::string fingerprint() const {
    std::uint64_t h = fnv1a(descriptor_set_);
    char buf[64];
    for (std::size_t i = 0; i < descriptors_.size(); ++i) {
      const auto& d = descriptors_[i];
      h = fnv1a(d.name, h);
      h = fnv1a(to_string(d.encoding), h);
      for (const auto& c : d.categories) h = fnv1a(c + ",", h);
      h = fnv1a(active_[i] ? "+" : "-", h);
      if (standardization_[i].fitted) {
        std::snprintf(buf, sizeof(buf), "%.17g/%.17g", standardization_[i].mean,
                      standardization_[i].stddev);
        h = fnv1a(buf, h);
      }
      h = fnv1a(";", h);
    }
    return to_hex(h);
  }

 private:
  std::string descriptor_set_;
  std::vector<FeatureDescriptor> descriptors_;
  std::vector<Standardization> standardization_;
  std::vector<bool> active_;
};

inline const std::vector<std::string>& default_reason_start_categories() {
  static const std::vector<std::string> c = {
      "trackdone", "fwdbtn", "backbtn",    "clickrow", "playbtn",   "endplay", "remote",
      "appload",   "trackerror", "popup", "uriopen",  "clickside", "other"};
  return c;
}

// Reason-end omits "appload": an app load starts playback but never ends it.
// This keeps the default state at 70 columns.
inline const std::vector<std::string>& default_reason_end_categories() {
  static const std::vector<std::string> c = {
      "trackdone", "fwdbtn", "backbtn", "clickrow", "playbtn",   "endplay",
      "remote",    "trackerror", "popup", "uriopen", "clickside", "other"};
  return c;
}

inline const std::vector<std::string>& default_context_type_categories() {
  static const std::vector<std::string> c = {"editorial_playlist", "user_collection",
                                             "personalized_playlist", "radio",
                                             "charts", "catalog"};
  return c;
}

struct SchemaConfig {
  std::string descriptor_set = "mssd";
  // Optional explicit ordered subset of descriptor names; empty means all.
  std::vector<std::string> descriptors;
  // ftype codes ("RE") or descriptor names to leave inactive.
  std::vector<std::string> exclude;
  // Overrides for one-hot category lists, keyed by descriptor name.
  std::map<std::string, std::vector<std::string>> categories;
  // Standardize SC/SL/SP/HD as well as the track features.
  bool standardize_non_audio = false;
};

inline SchemaConfig schema_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"descriptor_set", "descriptors", "exclude",
                                              "exclude_ftypes", "categories",
                                              "standardize_non_audio"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw Error("unknown schema-config key '" + key + "'");
  SchemaConfig c;
  c.descriptor_set = j.value("descriptor_set", c.descriptor_set);
  c.descriptors = j.value("descriptors", c.descriptors);
  c.exclude = j.value("exclude", c.exclude);
  for (const auto& t : j.value("exclude_ftypes", std::vector<std::string>{}))
    c.exclude.push_back(t);
  c.categories = j.value("categories", c.categories);
  c.standardize_non_audio = j.value("standardize_non_audio", c.standardize_non_audio);
  return c;
}

inline SchemaConfig load_schema_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read schema config " + path);
  return schema_config_from_json(nlohmann::json::parse(in));
}

namespace detail {

inline FeatureDescriptor scalar(std::string name, std::string label, FType t, Encoding e,
                                Field f, std::size_t track_index = 0) {
  FeatureDescriptor d;
  d.name = std::move(name);
  d.label = std::move(label);
  d.ftype = t;
  d.encoding = e;
  d.field = f;
  d.track_index = track_index;
  return d;
}

inline FeatureDescriptor one_hot(std::string name, std::string label, FType t, Field f,
                                 std::vector<std::string> categories) {
  FeatureDescriptor d = scalar(std::move(name), std::move(label), t, Encoding::OneHot, f);
  d.categories = std::move(categories);
  return d;
}

inline std::size_t fallback_index(const std::vector<std::string>& categories) {
  auto it = std::find(categories.begin(), categories.end(), "other");
  return it != categories.end() ? static_cast<std::size_t>(it - categories.begin())
                                : categories.size() - 1;
}

// Canonical MSSD layout: UB block, CX block, CN block.
inline std::vector<FeatureDescriptor> mssd_descriptors(bool standardize_non_audio) {
  const Encoding counts = standardize_non_audio ? Encoding::NumericStandardized
                                                : Encoding::NumericRaw;
  std::vector<FeatureDescriptor> d;
  d.push_back(one_hot("reason_start", "Reason Start", FType::RS, Field::ReasonStart,
                      default_reason_start_categories()));
  d.push_back(one_hot("reason_end", "Reason End", FType::RE, Field::ReasonEnd,
                      default_reason_end_categories()));
  d.push_back(scalar("no_pause", "No Pause", FType::PA, Encoding::Boolean, Field::NoPause));
  d.push_back(scalar("short_pause", "Short Pause", FType::PA, Encoding::Boolean,
                     Field::ShortPause));
  d.push_back(scalar("long_pause", "Long Pause", FType::PA, Encoding::Boolean,
                     Field::LongPause));
  d.push_back(scalar("n_seekfwd", "Num Seekfwd", FType::SC, counts, Field::SeekFwd));
  d.push_back(scalar("n_seekback", "Num Seekback", FType::SC, counts, Field::SeekBack));
  d.push_back(scalar("context_switch", "Context Switch", FType::PS, Encoding::Boolean,
                     Field::ContextSwitch));
  d.push_back(scalar("session_length", "Session Length", FType::SL, counts,
                     Field::SessionLength));
  d.push_back(scalar("session_position", "Session Position", FType::SP, counts,
                     Field::SessionPosition));
  d.push_back(scalar("hour_of_day", "Hour Of Day", FType::HD, counts, Field::HourOfDay));
  d.push_back(one_hot("context_type", "Context Type", FType::PT, Field::ContextType,
                      default_context_type_categories()));
  d.push_back(scalar("premium", "Premium", FType::PR, Encoding::Boolean, Field::Premium));
  d.push_back(scalar("shuffle", "Shuffle", FType::SH, Encoding::Boolean, Field::Shuffle));
  for (std::size_t k = 0; k < kNumTrackFeatures; ++k) {
    d.push_back(scalar(std::string(kTrackFeatureNames[k]), title_case(kTrackFeatureNames[k]),
                       FType::TR, Encoding::NumericStandardized, Field::Track, k));
  }
  for (auto& x : d)
    if (x.encoding == Encoding::OneHot) x.fallback = fallback_index(x.categories);
  return d;
}

inline void mask_items(FeatureSchema& schema, const std::vector<std::string>& items) {
  for (const auto& item : items) {
    if (auto t = parse_ftype(item)) {
      for (std::size_t i = 0; i < schema.size(); ++i)
        if (schema.descriptor(i).ftype == *t) schema.set_active(i, false);
    } else if (auto idx = schema.index_of(item)) {
      schema.set_active(*idx, false);
    } else {
      throw Error("unknown feature type or descriptor '" + item + "'");
    }
  }
  if (schema.active_count() == 0) throw Error("exclusion leaves an empty schema");
}

inline double numeric_value(const RawRecord& r, const FeatureDescriptor& d) {
  switch (d.field) {
    case Field::NoPause: return r.no_pause ? 1.0 : 0.0;
    case Field::ShortPause: return r.short_pause ? 1.0 : 0.0;
    case Field::LongPause: return r.long_pause ? 1.0 : 0.0;
    case Field::SeekFwd: return r.n_seekfwd;
    case Field::SeekBack: return r.n_seekback;
    case Field::ContextSwitch: return r.context_switch ? 1.0 : 0.0;
    case Field::SessionLength: return r.session_length;
    case Field::SessionPosition: return r.session_position;
    case Field::HourOfDay: return r.hour_of_day;
    case Field::Premium: return r.premium ? 1.0 : 0.0;
    case Field::Shuffle: return r.shuffle ? 1.0 : 0.0;
    case Field::Track: return r.track_features[d.track_index];
    default: break;
  }
  throw Error("descriptor '" + d.name + "' is not numeric");
}

inline const std::string& category_value(const RawRecord& r, const FeatureDescriptor& d) {
  switch (d.field) {
    case Field::ReasonStart: return r.reason_start;
    case Field::ReasonEnd: return r.reason_end;
    case Field::ContextType: return r.context_type;
    default: break;
  }
  throw Error("descriptor '" + d.name + "' is not categorical");
}

}  // namespace detail

inline FeatureSchema build_schema(const SchemaConfig& config = {}) {
  if (config.descriptor_set != "mssd")
    throw Error("unknown descriptor set '" + config.descriptor_set + "'");
  auto all = detail::mssd_descriptors(config.standardize_non_audio);

  for (const auto& [name, cats] : config.categories) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const FeatureDescriptor& d) { return d.name == name; });
    if (it == all.end()) throw Error("unknown descriptor name '" + name + "' in categories");
    if (it->encoding != Encoding::OneHot)
      throw Error("descriptor '" + name + "' is not one-hot");
    if (cats.empty()) throw Error("empty category list for '" + name + "'");
    if (std::set<std::string>(cats.begin(), cats.end()).size() != cats.size())
      throw Error("duplicate category in list for '" + name + "'");
    it->categories = cats;
    it->fallback = detail::fallback_index(cats);
  }

  std::vector<FeatureDescriptor> chosen;
  if (config.descriptors.empty()) {
    chosen = std::move(all);
  } else {
    std::set<std::string> seen;
    for (const auto& name : config.descriptors) {
      if (!seen.insert(name).second) throw Error("duplicate descriptor name '" + name + "'");
      auto it = std::find_if(all.begin(), all.end(),
                             [&](const FeatureDescriptor& d) { return d.name == name; });
      if (it == all.end()) throw Error("unknown descriptor name '" + name + "'");
      chosen.push_back(*it);
    }
  }

  FeatureSchema schema(config.descriptor_set, std::move(chosen));
  detail::mask_items(schema, config.exclude);
  return schema;
}

// Returns a copy with `excluded` ftypes or descriptor names deactivated.
inline FeatureSchema apply_mask(const FeatureSchema& schema,
                                const std::vector<std::string>& excluded) {
  FeatureSchema out = schema;
  detail::mask_items(out, excluded);
  return out;
}

inline FeatureSchema corrected(const FeatureSchema& schema) {
  return apply_mask(schema, {"RE", "SL"});
}

// Single-pass (Welford) population mean and standard deviation for every
// standardized descriptor, active or not.
inline FeatureSchema fit_standardizer(const FeatureSchema& schema,
                                      std::span<const Session> sessions) {
  if (sessions.empty()) throw Error("cannot fit standardizer on an empty stream");
  struct Acc {
    std::size_t n = 0;
    double mean = 0.0, m2 = 0.0;
  };
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (schema.descriptor(i).encoding == Encoding::NumericStandardized) targets.push_back(i);
  std::vector<Acc> acc(targets.size());
  for (const auto& s : sessions) {
    for (const auto& r : s.records) {
      for (std::size_t k = 0; k < targets.size(); ++k) {
        const double x = detail::numeric_value(r, schema.descriptor(targets[k]));
        Acc& a = acc[k];
        ++a.n;
        const double delta = x - a.mean;
        a.mean += delta / static_cast<double>(a.n);
        a.m2 += delta * (x - a.mean);
      }
    }
  }
  FeatureSchema out = schema;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Acc& a = acc[k];
    if (a.n == 0) throw Error("cannot fit standardizer on a stream without records");
    const double sd = std::sqrt(a.m2 / static_cast<double>(a.n));
    if (!(sd > 0.0) || !std::isfinite(sd))
      throw Error("constant feature '" + schema.descriptor(targets[k]).name + "'");
    out.set_standardization(targets[k], {a.mean, sd, true});
  }
  return out;
}

struct EncodeDiagnostics {
  std::size_t unknown_category = 0;
};

// Writes the active encoding of `record` into `out` (size = active width).
inline void encode_into(const RawRecord& record, const FeatureSchema& schema,
                        std::span<double> out, EncodeDiagnostics* diag = nullptr) {
  std::size_t at = 0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!schema.active(i)) continue;
    const FeatureDescriptor& d = schema.descriptor(i);
    switch (d.encoding) {
      case Encoding::OneHot: {
        const std::string& v = detail::category_value(record, d);
        auto it = std::find(d.categories.begin(), d.categories.end(), v);
        std::size_t hot = d.fallback;
        if (it != d.categories.end()) {
          hot = static_cast<std::size_t>(it - d.categories.begin());
        } else if (diag) {
          ++diag->unknown_category;
        }
        for (std::size_t c = 0; c < d.categories.size(); ++c) out[at + c] = c == hot ? 1.0 : 0.0;
        at += d.categories.size();
        break;
      }
      case Encoding::NumericStandardized: {
        const Standardization& st = schema.standardization(i);
        if (!st.fitted) throw Error("schema not fitted for '" + d.name + "'");
        out[at++] = (detail::numeric_value(record, d) - st.mean) / st.stddev;
        break;
      }
      case Encoding::NumericRaw:
      case Encoding::Boolean:
        out[at++] = detail::numeric_value(record, d);
        break;
    }
  }
}

inline StateVector encode_record(const RawRecord& record, const FeatureSchema& schema,
                                 EncodeDiagnostics* diag = nullptr) {
  StateVector s{std::vector<double>(schema.active_width())};
  encode_into(record, schema, s.values, diag);
  return s;
}

// Versioned JSON layout document; also embedded in checkpoints.
inline nlohmann::json schema_to_json(const FeatureSchema& schema) {
  nlohmann::json descs = nlohmann::json::array();
  const auto offsets = schema.offsets();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& d = schema.descriptor(i);
    nlohmann::json j = {{"name", d.name},
                        {"label", d.label},
                        {"group", to_string(d.group())},
                        {"type", to_string(d.ftype)},
                        {"encoding", to_string(d.encoding)},
                        {"width", d.width()},
                        {"active", schema.active(i)},
                        {"offset", offsets[i] ? nlohmann::json(*offsets[i]) : nlohmann::json()}};
    if (d.encoding == Encoding::OneHot) {
      j["categories"] = d.categories;
      j["fallback"] = d.categories[d.fallback];
    }
    const auto& st = schema.standardization(i);
    if (st.fitted) {
      j["mean"] = st.mean;
      j["stddev"] = st.stddev;
    }
    descs.push_back(std::move(j));
  }
  return {{"format", "skipdqn.schema"},
          {"version", 1},
          {"descriptor_set", schema.descriptor_set()},
          {"reconstructed_layout", true},
          {"note", "canonical MSSD layout reconstructed from the published field list; "
                   "date is not encoded"},
          {"active_width", schema.active_width()},
          {"fingerprint", schema.fingerprint()},
          {"descriptors", descs}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "skipdqn.schema" || j.value("version", 0) != 1)
    throw Error("not a version-1 schema document");
  // Rebuild from the canonical set so field bindings come from code, then
  // overlay categories, activity and statistics.
  const bool standardize_non_audio = [&] {
    for (const auto& d : j.at("descriptors"))
      if (d.at("name") == "session_length")
        return d.at("encoding") == "numeric-standardized";
    return false;
  }();
  SchemaConfig cfg;
  cfg.descriptor_set = j.at("descriptor_set").get<std::string>();
  cfg.standardize_non_audio = standardize_non_audio;
  for (const auto& d : j.at("descriptors")) {
    cfg.descriptors.push_back(d.at("name").get<std::string>());
    if (d.contains("categories"))
      cfg.categories[d.at("name").get<std::string>()] =
          d.at("categories").get<std::vector<std::string>>();
  }
  FeatureSchema schema = build_schema(cfg);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& d = j.at("descriptors")[i];
    if (parse_encoding(d.at("encoding").get<std::string>()) != schema.descriptor(i).encoding)
      throw Error("encoding mismatch for '" + schema.descriptor(i).name + "'");
    schema.set_active(i, d.at("active").get<bool>());
    if (d.contains("mean"))
      schema.set_standardization(i, {d.at("mean").get<double>(), d.at("stddev").get<double>(),
                                     true});
  }
  if (schema.fingerprint() != j.value("fingerprint", schema.fingerprint()))
    throw Error("schema fingerprint mismatch after reload");
  return schema;
}

}  // namespace skipdqn
