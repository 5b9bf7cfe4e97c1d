#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace skipdqn;
using skipdqn::fixtures::make_session;

namespace {

std::size_t width_of(const FeatureSchema& s, FType t) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.descriptor(i).ftype == t) w += s.descriptor(i).width();
  return w;
}

FeatureSchema fitted_default() {
  return fixtures::fitted(fixtures::synthetic(50, 3));
}

}  // namespace

TEST(Schema, DefaultWidthIsSeventy) {
  const FeatureSchema s = build_schema();
  EXPECT_EQ(s.active_width(), 70u);
  EXPECT_EQ(width_of(s, FType::RS), 13u);
  EXPECT_EQ(width_of(s, FType::RE), 12u);
  EXPECT_EQ(width_of(s, FType::PT), 6u);
  EXPECT_EQ(width_of(s, FType::TR), 28u);
}

TEST(Schema, EveryDescriptorHasOneGroup) {
  const FeatureSchema s = build_schema();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& d = s.descriptor(i);
    switch (d.ftype) {
      case FType::RE: case FType::RS: case FType::PA: case FType::SC: case FType::PS:
        EXPECT_EQ(d.group(), Group::UB) << d.name;
        break;
      case FType::TR:
        EXPECT_EQ(d.group(), Group::CN) << d.name;
        break;
      default:
        EXPECT_EQ(d.group(), Group::CX) << d.name;
    }
  }
}

TEST(Schema, ExcludingTypesSubtractsTheirWidth) {
  SchemaConfig cfg;
  cfg.exclude = {"RE", "SL"};
  const FeatureSchema full = build_schema();
  EXPECT_EQ(build_schema(cfg).active_width(),
            70u - width_of(full, FType::RE) - width_of(full, FType::SL));
  EXPECT_EQ(corrected(full).active_width(), 57u);
}

TEST(Schema, ExcludingEverythingIsRejected) {
  SchemaConfig cfg;
  for (FType t : kAllFTypes) cfg.exclude.emplace_back(to_string(t));
  EXPECT_THROW(build_schema(cfg), Error);
}

TEST(Schema, UnknownNamesAreRejected) {
  SchemaConfig cfg;
  cfg.exclude = {"XX"};
  EXPECT_THROW(build_schema(cfg), Error);
  cfg.exclude.clear();
  cfg.descriptors = {"reason_start", "no_such_field"};
  EXPECT_THROW(build_schema(cfg), Error);
  EXPECT_THROW(schema_config_from_json({{"exclud", {"RE"}}}), Error);
}

TEST(Schema, FitsPopulationStatistics) {
  SchemaConfig cfg;
  cfg.descriptors = {"tempo"};
  const FeatureSchema base = build_schema(cfg);
  Session s = make_session(10);
  std::vector<Session> sessions(1, s);
  const double raw[] = {100, 120, 80, 100};
  for (int i = 0; i < 10; ++i) sessions[0].records[i].track_features[17] = raw[i % 4];
  sessions[0].records.resize(4);  // fitting does not validate session structure
  const FeatureSchema f = fit_standardizer(base, sessions);
  EXPECT_DOUBLE_EQ(f.standardization(0).mean, 100.0);
  EXPECT_NEAR(f.standardization(0).stddev, 14.142135623730951, 1e-12);
}

TEST(Schema, ConstantFeatureIsRejected) {
  SchemaConfig cfg;
  cfg.descriptors = {"tempo"};
  Session s = make_session(10);
  for (auto& r : s.records) r.track_features[17] = 120.0;
  try {
    fit_standardizer(build_schema(cfg), std::vector<Session>{s});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("constant feature"), std::string::npos);
  }
}

TEST(Schema, StandardNormalInputStaysNearStandard) {
  SchemaConfig cfg;
  cfg.descriptors = {"energy"};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::vector<Session> sessions;
  for (int k = 0; k < 400; ++k) {
    Session s = make_session(20, "s" + std::to_string(k));
    for (auto& r : s.records) r.track_features[8] = z(rng);
    sessions.push_back(s);
  }
  const FeatureSchema f = fit_standardizer(build_schema(cfg), sessions);
  EXPECT_NEAR(f.standardization(0).mean, 0.0, 0.05);
  EXPECT_NEAR(f.standardization(0).stddev, 1.0, 0.05);
}

TEST(Schema, EncodesScalarsAndOneHots) {
  FeatureSchema s = fitted_default();
  const auto tempo = *s.index_of("tempo");
  s.set_standardization(tempo, {100.0, 20.0, true});
  RawRecord r = make_session(10).records[0];
  r.premium = true;
  r.reason_start = "fwdbtn";
  r.track_features[17] = 120.0;
  const StateVector v = encode_record(r, s);
  const auto offsets = s.offsets();
  EXPECT_EQ(v[*offsets[*s.index_of("premium")]], 1.0);
  EXPECT_EQ(v[*offsets[tempo]], 1.0);
  const auto rs = *s.index_of("reason_start");
  const auto& cats = s.descriptor(rs).categories;
  for (std::size_t c = 0; c < cats.size(); ++c)
    EXPECT_EQ(v[*offsets[rs] + c], cats[c] == "fwdbtn" ? 1.0 : 0.0);
}

TEST(Schema, UnseenCategoryGoesToOther) {
  const FeatureSchema s = fitted_default();
  RawRecord r = make_session(10).records[0];
  r.reason_start = "teleport";
  EncodeDiagnostics diag;
  const StateVector v = encode_record(r, s, &diag);
  EXPECT_EQ(diag.unknown_category, 1u);
  const auto rs = *s.index_of("reason_start");
  const auto& d = s.descriptor(rs);
  EXPECT_EQ(d.categories[d.fallback], "other");
  EXPECT_EQ(v[*s.offsets()[rs] + d.fallback], 1.0);
}

TEST(Schema, UnfittedSchemaRefusesToEncode) {
  EXPECT_THROW(encode_record(make_session(10).records[0], build_schema()), Error);
}

TEST(Schema, EmptyMaskIsIdentity) {
  const FeatureSchema s = fitted_default();
  const FeatureSchema m = apply_mask(s, {});
  EXPECT_EQ(s.fingerprint(), m.fingerprint());
  const RawRecord r = make_session(12).records[4];
  EXPECT_EQ(encode_record(r, s), encode_record(r, m));
}

TEST(Schema, RemovingReasonStartDropsItsCategories) {
  const FeatureSchema s = fitted_default();
  EXPECT_EQ(s.active_width() - apply_mask(s, {"RS"}).active_width(),
            s.descriptor(*s.index_of("reason_start")).categories.size());
}

TEST(Schema, CorrectedSchemaHasNoLeakySlots) {
  const FeatureSchema c = corrected(fitted_default());
  EXPECT_FALSE(c.active(*c.index_of("reason_end")));
  EXPECT_FALSE(c.active(*c.index_of("session_length")));
  EXPECT_EQ(encode_record(make_session(10).records[0], c).size(), c.active_width());
}

// Property: masking then encoding equals encoding then deleting the slots.
TEST(SchemaProperty, MaskCommutesWithEncoding) {
  const auto sessions = fixtures::synthetic(30, 11);
  const FeatureSchema s = fixtures::fitted(sessions);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> items;
    for (FType t : kAllFTypes)
      if (std::bernoulli_distribution(0.3)(rng)) items.emplace_back(to_string(t));
    if (items.size() == kAllFTypes.size()) items.pop_back();
    const FeatureSchema m = apply_mask(s, items);
    const auto offsets = s.offsets();
    for (const auto& sess : sessions) {
      for (const auto& r : sess.records) {
        const StateVector full = encode_record(r, s);
        std::vector<double> kept;
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (!m.active(i)) continue;
          for (std::size_t k = 0; k < s.descriptor(i).width(); ++k)
            kept.push_back(full[*offsets[i] + k]);
        }
        const StateVector masked = encode_record(r, m);
        ASSERT_EQ(masked.size(), m.active_width());
        ASSERT_EQ(masked.values, kept);
      }
    }
  }
}

TEST(SchemaProperty, EncodingIsDeterministic) {
  const auto sessions = fixtures::synthetic(20, 2);
  const FeatureSchema s = fixtures::fitted(sessions);
  for (const auto& sess : sessions)
    for (const auto& r : sess.records) ASSERT_EQ(encode_record(r, s), encode_record(r, s));
}

TEST(SchemaProperty, StandardizationRoundTrip) {
  const auto sessions = fixtures::synthetic(200, 4);
  SchemaConfig cfg;
  cfg.standardize_non_audio = true;
  const FeatureSchema s = fixtures::fitted(sessions, cfg);
  const auto offsets = s.offsets();
  std::vector<std::vector<double>> cols(s.size());
  for (const auto& sess : sessions)
    for (const auto& r : sess.records) {
      const StateVector v = encode_record(r, s);
      for (std::size_t i = 0; i < s.size(); ++i)
        if (s.descriptor(i).encoding == Encoding::NumericStandardized)
          cols[i].push_back(v[*offsets[i]]);
    }
  std::size_t checked = 0;
  for (const auto& c : cols) {
    if (c.empty()) continue;
    ++checked;
    double m = 0, ss = 0;
    for (double x : c) m += x;
    m /= static_cast<double>(c.size());
    for (double x : c) ss += (x - m) * (x - m);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(c.size())), 1.0, 1e-9);
  }
  EXPECT_GT(checked, 28u);
}

TEST(Schema, JsonRoundTripPreservesFingerprint) {
  const FeatureSchema s = corrected(fitted_default());
  const FeatureSchema back = schema_from_json(schema_to_json(s));
  EXPECT_EQ(back.fingerprint(), s.fingerprint());
  const RawRecord r = make_session(10).records[3];
  EXPECT_EQ(encode_record(r, back), encode_record(r, s));
}

TEST(Schema, FingerprintTracksMaskAndStatistics) {
  const FeatureSchema s = fitted_default();
  EXPECT_NE(s.fingerprint(), corrected(s).fingerprint());
  EXPECT_NE(s.fingerprint(), build_schema().fingerprint());
}
