#include "siam/analysis.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace siam;

namespace {

FocusGrid small_grid(double x0 = 2.1, double z0 = -0.3, int n = 13, double spacing = 0.05) {
  GridSpec g;
  g.x_min = x0;
  g.x_max = x0 + spacing * (n - 1);
  g.z_min = z0;
  g.z_max = z0 + spacing * (n - 1);
  g.spacing = spacing;
  return make_focus_grid(g);
}

BeamformingMap clean_map(const FocusGrid& grid, std::vector<CleanComponent> comps) {
  BeamformingMap m;
  m.kind = MapKind::clean_sc;
  m.values.assign(grid.size(), 0.0);
  m.components = std::move(comps);
  return m;
}

Spectrum flat_spectrum(const std::vector<double>& freqs, double value) {
  Spectrum s;
  s.frequencies = freqs;
  s.values.assign(freqs.size(), value);
  return s;
}

std::vector<AngleSpectrum> angles_with(const std::vector<double>& levels_db, const std::vector<double>& freqs) {
  std::vector<AngleSpectrum> out;
  for (std::size_t a = 0; a < levels_db.size(); ++a)
    out.push_back({60.0 + 10.0 * static_cast<double>(a), 0.0, kMasked, flat_spectrum(freqs, db_to_power(levels_db[a]))});
  return out;
}

double row_mean(const Eigen::MatrixXd& m, Eigen::Index col) {
  double s = 0;
  int n = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (!is_masked(m(r, col))) {
      s += m(r, col);
      ++n;
    }
  return s / n;
}

GeometryPtr full_build() { return std::make_shared<const ArrayGeometry>(assemble_full_array(3, 3, 7)); }

}  // namespace

TEST(Roi, BoxAndPolygonMembership) {
  const auto roi = RegionOfInterest::box(0, 1, 0, 2);
  EXPECT_DOUBLE_EQ(roi.area(), 2.0);
  EXPECT_TRUE(roi.contains({0.5, 1.0}));
  EXPECT_TRUE(roi.contains({1.0, 2.0}));  // corner counts as inside
  EXPECT_TRUE(roi.contains({0.0, 0.7}));  // edge counts as inside
  EXPECT_FALSE(roi.contains({1.01, 1.0}));
  const RegionOfInterest tri{{{0, 0}, {2, 0}, {0, 2}}, "tri"};
  EXPECT_TRUE(tri.contains({0.5, 0.5}));
  EXPECT_TRUE(tri.contains({1.0, 1.0}));
  EXPECT_FALSE(tri.contains({1.2, 1.2}));
  const RegionOfInterest line{{{0, 0}, {1, 1}, {2, 2}}, "line"};
  EXPECT_THROW(line.validate(), DomainError);
}

TEST(IntegrateMap, CleanComponentInsideAndOutside) {
  const auto grid = small_grid();
  const auto roi = RegionOfInterest::box(2.2, 2.4, -0.1, 0.1);
  const std::size_t inside = 5 * grid.nx + 4;  // (2.30, -0.05)
  const std::size_t outside = 0;                // (2.10, -0.30)
  ASSERT_TRUE(roi.contains(grid.local[inside]));
  ASSERT_FALSE(roi.contains(grid.local[outside]));
  const double q2 = 0.37;
  EXPECT_DOUBLE_EQ(integrate_map(clean_map(grid, {{inside, q2}}), grid, roi), q2);
  EXPECT_EQ(integrate_map(clean_map(grid, {{outside, q2}}), grid, roi), 0.0);
  const std::size_t inside2 = 7 * grid.nx + 6;
  ASSERT_TRUE(roi.contains(grid.local[inside2]));
  EXPECT_DOUBLE_EQ(integrate_map(clean_map(grid, {{inside, q2}, {inside2, q2}}), grid, roi), 2 * q2);
}

TEST(IntegrateMap, ConventionalSumsClampedValues) {
  const auto grid = small_grid();
  BeamformingMap m;
  m.values.assign(grid.size(), 1.0);
  m.values[grid.nx * 6 + 6] = -5.0;
  const auto roi = RegionOfInterest::box(2.3, 2.5, -0.1, 0.1);
  // 5 x 5 nodes inside, one of them negative
  EXPECT_DOUBLE_EQ(integrate_map(m, grid, roi), 24.0);
}

TEST(IntegrateMap, EmptyRoiRejected) {
  const auto grid = small_grid();
  const auto m = clean_map(grid, {});
  EXPECT_THROW(integrate_map(m, grid, RegionOfInterest::box(10, 11, 10, 11)), DomainError);
  EXPECT_THROW(integrate_map(m, grid, RegionOfInterest::box(2.301, 2.302, 0.001, 0.002)), DomainError);
  EXPECT_THROW(integrate_map(m, grid, RegionOfInterest{{{0, 0}, {1, 1}}, "x"}), DomainError);
}

TEST(IntegrateMap, SpectrumOverFrequencies) {
  const auto grid = small_grid();
  std::vector<BeamformingMap> maps;
  for (int k = 1; k <= 3; ++k) {
    auto m = clean_map(grid, {{10, 0.1 * k}});
    m.frequency = 1000.0 * k;
    maps.push_back(m);
  }
  const auto s = integrate_maps(maps, grid, RegionOfInterest::box(0, 10, -10, 10));
  EXPECT_EQ(s.frequencies, (std::vector<double>{1000, 2000, 3000}));
  EXPECT_DOUBLE_EQ(s.values[2], 0.3);
}

TEST(Directivity, IdenticalSpectraGiveZero) {
  const auto spectra = angles_with({50, 50, 50, 50}, {500, 1000, 2000});
  const auto d = directivity(spectra);
  EXPECT_EQ(d.gamma_db.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.angles, (std::vector<double>{60, 70, 80, 90}));
}

TEST(Directivity, OneAngleThreeDecibelsUp) {
  for (int n : {2, 3, 5, 13}) {
    std::vector<double> levels(static_cast<std::size_t>(n), 40.0);
    levels[1] += 3.0;
    const auto d = directivity(angles_with(levels, {1000}));
    EXPECT_NEAR(d.gamma_db(1, 0), 3.0 - 3.0 / n, 1e-9) << n;
    EXPECT_NEAR(d.gamma_db(0, 0), -3.0 / n, 1e-9) << n;
  }
}

TEST(Directivity, LinearAveragingOption) {
  const int n = 4;
  std::vector<double> levels(n, 40.0);
  levels[2] += 10 * std::log10(2.0);
  const auto d = directivity(angles_with(levels, {1000}), AngleAveraging::linear);
  // mean power (2 + 3) / 4 relative to the others
  EXPECT_NEAR(d.gamma_db(2, 0), 10 * std::log10(2.0 / (5.0 / 4)), 1e-9);
  EXPECT_NEAR(d.gamma_db(0, 0), 10 * std::log10(1.0 / (5.0 / 4)), 1e-9);
}

TEST(Directivity, MeanZeroAndOffsetInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(20, 80);
  std::vector<AngleSpectrum> spectra;
  const std::vector<double> freqs{250, 500, 1000, 2000, 4000, 8000};
  for (int a = 0; a < 9; ++a) {
    Spectrum s;
    s.frequencies = freqs;
    for (std::size_t k = 0; k < freqs.size(); ++k) s.values.push_back(db_to_power(u(rng)));
    spectra.push_back({50.0 + 10 * a, 0.5, kMasked, s});
  }
  const auto d = directivity(spectra);
  for (Eigen::Index k = 0; k < d.gamma_db.cols(); ++k) EXPECT_NEAR(row_mean(d.gamma_db, k), 0.0, 1e-9);
  auto shifted = spectra;
  for (auto& s : shifted)
    for (auto& v : s.spectrum.values) v *= std::pow(10.0, 0.75);
  const auto d2 = directivity(shifted);
  EXPECT_LE((d2.gamma_db - d.gamma_db).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR((d2.psd_db - d.psd_db).mean(), 7.5, 1e-9);
}

TEST(Directivity, MissingBinIsMaskedNotZero) {
  auto spectra = angles_with({40, 43, 46}, {1000, 2000});
  spectra[2].spectrum.frequencies = {1000};
  spectra[2].spectrum.values = {db_to_power(46)};
  const auto d = directivity(spectra);
  ASSERT_EQ(d.frequencies.size(), 2u);
  EXPECT_TRUE(is_masked(d.gamma_db(2, 1)));
  EXPECT_TRUE(is_masked(d.psd_db(2, 1)));
  // the remaining angles average among themselves
  EXPECT_NEAR(d.gamma_db(0, 1), -1.5, 1e-9);
  EXPECT_NEAR(d.gamma_db(1, 1), 1.5, 1e-9);
  EXPECT_NEAR(d.gamma_db(2, 0), 3.0, 1e-9);
}

TEST(Directivity, NeedsTwoAngles) {
  EXPECT_THROW(directivity(angles_with({40}, {1000})), DomainError);
  auto spectra = angles_with({40, 41}, {1000});
  spectra[1].spectrum.band_type = BandType::octave;
  EXPECT_THROW(directivity(spectra), DomainError);
}

TEST(Directivity, CosineSquaredPeaksAtBroadside) {
  std::vector<AngleSpectrum> spectra;
  for (double theta = 50; theta <= 130; theta += 8) {
    const double p = std::pow(std::sin(deg2rad(theta)), 2);
    spectra.push_back({theta, 0.0, kMasked, flat_spectrum({1000, 4000}, p)});
  }
  const auto d = directivity(spectra);
  EXPECT_DOUBLE_EQ(d.angles[d.argmax_angle(0)], 90.0);
  EXPECT_DOUBLE_EQ(d.angles[d.argmax_angle(1)], 90.0);
}

TEST(OctavePolar, FlatSurfaceGivesZeroTable) {
  std::vector<double> freqs;
  for (double f = 0; f <= 24000; f += 46.875) freqs.push_back(f);
  const auto d = directivity(angles_with({30, 30, 30}, freqs));
  const auto polar = octave_polar(d);
  EXPECT_EQ(polar.band_type, BandType::octave);
  for (Eigen::Index a = 0; a < polar.gamma_db.rows(); ++a)
    for (Eigen::Index k = 0; k < polar.gamma_db.cols(); ++k)
      if (!is_masked(polar.gamma_db(a, k))) {
        EXPECT_NEAR(polar.gamma_db(a, k), 0.0, 1e-9);
      }
}

TEST(OctavePolar, EnergyInOneBandOnly) {
  std::vector<double> freqs;
  for (double f = 0; f <= 24000; f += 46.875) freqs.push_back(f);
  std::vector<AngleSpectrum> spectra;
  for (int a = 0; a < 4; ++a) {
    Spectrum s;
    s.frequencies = freqs;
    for (double f : freqs) s.values.push_back(f > 900 && f < 1100 ? 1e-3 * (a + 1) : 0.0);
    spectra.push_back({60.0 + 20 * a, 0, kMasked, s});
  }
  const auto polar = octave_polar(directivity(spectra));
  bool saw_band = false;
  for (std::size_t k = 0; k < polar.frequencies.size(); ++k) {
    const auto col = polar.gamma_db.col(static_cast<Eigen::Index>(k));
    if (std::abs(polar.frequencies[k] - 1000) < 1) {
      saw_band = true;
      EXPECT_GT(col.cwiseAbs().maxCoeff(), 1.0);
    } else {
      for (Eigen::Index a = 0; a < col.size(); ++a)
        if (!is_masked(col(a))) {
          EXPECT_EQ(col(a), 0.0) << polar.frequencies[k];
        }
    }
  }
  EXPECT_TRUE(saw_band);
}

TEST(OctavePolar, UniformOffsetLeavesTableUnchanged) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::vector<double> freqs;
  for (double f = 0; f <= 24000; f += 93.75) freqs.push_back(f);
  std::vector<AngleSpectrum> spectra, shifted;
  for (int a = 0; a < 5; ++a) {
    Spectrum s;
    s.frequencies = freqs;
    for (std::size_t k = 0; k < freqs.size(); ++k) s.values.push_back(u(rng));
    spectra.push_back({60.0 + 10 * a, 0, kMasked, s});
    for (auto& v : s.values) v *= std::pow(10.0, 0.2);
    shifted.push_back({60.0 + 10 * a, 0, kMasked, s});
  }
  const auto p1 = octave_polar(directivity(spectra));
  const auto p2 = octave_polar(directivity(shifted));
  for (Eigen::Index a = 0; a < p1.gamma_db.rows(); ++a)
    for (Eigen::Index k = 0; k < p1.gamma_db.cols(); ++k) {
      if (is_masked(p1.gamma_db(a, k))) {
        EXPECT_TRUE(is_masked(p2.gamma_db(a, k)));
        continue;
      }
      EXPECT_NEAR(p1.gamma_db(a, k), p2.gamma_db(a, k), 1e-9);
    }
}

TEST(OctavePolar, RejectsBandedInput) {
  auto spectra = angles_with({30, 31}, {1000, 2000});
  for (auto& s : spectra) s.spectrum.band_type = BandType::octave;
  EXPECT_THROW(octave_polar(directivity(spectra)), DomainError);
}

TEST(DistanceNormalize, Examples) {
  const auto s = flat_spectrum({100, 1000}, db_to_power(50));
  EXPECT_EQ(distance_normalize(s, 1.0, 1.0).values, s.values);
  EXPECT_NEAR(power_to_db(distance_normalize(s, 10.0, 1.0).values[0]), 70.0, 1e-12);
  EXPECT_NEAR(power_to_db(distance_normalize(s, 3.39).values[1]) - 50.0, 10.60, 0.005);
  EXPECT_NEAR(power_to_db(distance_normalize(s, 3.39).values[1]) - 50.0, 20 * std::log10(3.39), 1e-12);
  EXPECT_THROW(distance_normalize(s, 0.0), DomainError);
  EXPECT_THROW(distance_normalize(s, 1.0, -1.0), DomainError);
}

TEST(DistanceNormalize, ComposesAndKeepsMasks) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ud(0.1, 20);
  Spectrum s = flat_spectrum({100, 200, 300}, 4e-6);
  s.values[1] = kMasked;
  for (int i = 0; i < 50; ++i) {
    const double d = ud(rng), m = ud(rng), d0 = ud(rng);
    const auto a = distance_normalize(distance_normalize(s, d, m), m, d0);
    const auto b = distance_normalize(s, d, d0);
    EXPECT_NEAR(power_to_db(a.values[0]), power_to_db(b.values[0]), 1e-12);
    EXPECT_TRUE(is_masked(a.values[1]));
  }
}

TEST(FarField, MicsOnOneRayAgreeAfterNormalization) {
  Scene scene;
  scene.medium.absorption = false;
  Source src;
  src.position = Vec3(2.4, 0, 0);
  src.spectrum.level = 1e-4;
  scene.sources.push_back(src);
  const Vec3 dir = Vec3(0.3, 1.0, -0.2).normalized();
  const double d = 2.5;
  const std::vector<Vec3> mics{src.position + d * dir, src.position + 2 * d * dir};
  std::vector<double> freqs;
  for (double f = 300; f <= 20000; f *= 1.5) freqs.push_back(f);
  const auto set = synthesize_csm(scene, mics, freqs);
  std::vector<MicSpectrum> spectra(2);
  for (std::size_t m = 0; m < 2; ++m) {
    spectra[m].distance = (mics[m] - src.position).norm();
    for (const auto& c : set) {
      spectra[m].spectrum.frequencies.push_back(c.frequency);
      spectra[m].spectrum.values.push_back(c.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)).real());
    }
  }
  // source level is the PSD at 1 m
  Spectrum truth = flat_spectrum(freqs, src.spectrum.level);
  const auto cmp = farfield_compare(truth, spectra);
  EXPECT_FALSE(cmp.resampled);
  for (std::size_t k = 0; k < freqs.size(); ++k)
    EXPECT_NEAR(power_to_db(cmp.normalized_mics[0].values[k]), power_to_db(cmp.normalized_mics[1].values[k]), 0.2);
  EXPECT_LE(cmp.max_abs_delta(300, 20000), 1e-9);
}

TEST(FarField, EnergeticMeanAndDelta) {
  const std::vector<double> f{1000, 2000};
  std::vector<MicSpectrum> mics{{flat_spectrum(f, 1.0), 1.0}, {flat_spectrum(f, 0.25), 2.0}, {flat_spectrum(f, 2.0), 1.0}};
  const auto cmp = farfield_compare(flat_spectrum(f, 1.0), mics);
  // normalized mics are 1, 1 and 2
  EXPECT_NEAR(cmp.mic_mean_db[0], power_to_db(4.0 / 3), 1e-12);
  EXPECT_NEAR(cmp.delta_db[1], -10 * std::log10(4.0 / 3), 1e-12);
}

TEST(FarField, DisjointAxesResampledOntoCoarserAxis) {
  Spectrum integrated;
  for (double f = 1000; f <= 2000; f += 100) {
    integrated.frequencies.push_back(f);
    integrated.values.push_back(f);
  }
  Spectrum mic;
  for (double f = 1000; f <= 2000; f += 250) {
    mic.frequencies.push_back(f);
    mic.values.push_back(f);
  }
  const std::vector<MicSpectrum> mics{{mic, 1.0}};
  const auto cmp = farfield_compare(integrated, mics);
  EXPECT_TRUE(cmp.resampled);
  EXPECT_FALSE(cmp.note.empty());
  EXPECT_EQ(cmp.frequencies, mic.frequencies);
  EXPECT_LE(cmp.max_abs_delta(0, 1e9), 1e-9);
}

TEST(FarField, EmptyOverlapFlagged) {
  Spectrum integrated = flat_spectrum({100, 200, 300}, 1.0);
  const std::vector<MicSpectrum> mics{{flat_spectrum({5000, 6000}, 1.0), 1.0}};
  const auto cmp = farfield_compare(integrated, mics);
  EXPECT_TRUE(cmp.resampled);
  EXPECT_NE(cmp.note.find("do not overlap"), std::string::npos);
  for (double v : cmp.delta_db) EXPECT_TRUE(is_masked(v));
  EXPECT_THROW(farfield_compare(integrated, std::span<const MicSpectrum>{}), DomainError);
}

namespace {

DirectivityParams pipeline_params() {
  DirectivityParams p;
  p.frequencies = {2000, 4000, 8000};
  p.grid = small_grid().spec;
  p.roi = RegionOfInterest::box(2.1, 2.7, -0.3, 0.3, "model");
  p.medium.absorption = false;
  p.jobs = 1;
  return p;
}

Scene point_scene(SourceKind kind) {
  Scene scene;
  scene.medium.absorption = false;
  Source s;
  s.position = Vec3(2.4, 0, 0);
  s.kind = kind;
  s.axis = Vec3::UnitY();
  s.spectrum.level = 1e-3;
  scene.sources.push_back(s);
  return scene;
}

}  // namespace

TEST(DirectivityPipeline, MonopoleIsIsotropic) {
  const auto geo = full_build();
  const auto subs = pitch_subarray_series(geo, 13, 2.0, 140, 0.1);
  const auto res = directivity_pipeline(subs, exact_csm_provider(point_scene(SourceKind::monopole)), pipeline_params());
  ASSERT_EQ(res.surface.angles.size(), 13u);
  EXPECT_LE(res.surface.gamma_db.cwiseAbs().maxCoeff(), 0.5);
  // angles run from the upstream to the downstream edge
  EXPECT_LT(res.surface.angles.front(), 70.0);
  EXPECT_GT(res.surface.angles.back(), 120.0);
  for (std::size_t k = 1; k < res.surface.angles.size(); ++k)
    EXPECT_GT(res.surface.angles[k], res.surface.angles[k - 1]);
}

TEST(DirectivityPipeline, BroadsideDipolePeaksNearNinetyDegrees) {
  const auto geo = full_build();
  const auto subs = pitch_subarray_series(geo, 13, 2.0, 140, 0.1);
  auto p = pipeline_params();
  p.jobs = 2;
  const auto scene = point_scene(SourceKind::dipole);
  const auto res = directivity_pipeline(subs, exact_csm_provider(scene), p);
  const auto& s = res.surface;
  const double step = (s.angles.back() - s.angles.front()) / static_cast<double>(s.angles.size() - 1);
  for (std::size_t k = 0; k < s.frequencies.size(); ++k)
    EXPECT_NEAR(s.angles[s.argmax_angle(k)], 90.0, step) << s.frequencies[k];

  // A rank-one field seen through the level-true steering vector: the recovered power is the
  // square of the (r0/r)^2-weighted mean of |cos| to the dipole axis over the sub-array.
  const Vec3 src = scene.sources[0].position;
  for (std::size_t a = 0; a < subs.size(); ++a) {
    const auto pts = subs[a].positions();
    const double r0 = (position_stats(pts).mean - src).norm();
    double num = 0, den = 0;
    for (const auto& q : pts) {
      const Vec3 e = q - src;
      const double w = std::pow(r0 / e.norm(), 2);
      num += w * std::abs(e.y()) / e.norm();
      den += w;
    }
    const double expected_db = power_to_db(scene.sources[0].spectrum.level * std::pow(num / den, 2));
    for (Eigen::Index k = 0; k < s.psd_db.cols(); ++k)
      EXPECT_NEAR(s.psd_db(static_cast<Eigen::Index>(a), k), expected_db, 0.05) << a;
  }
}

TEST(DirectivityPipeline, JobsDoNotChangeResult) {
  const auto geo = full_build();
  const auto subs = pitch_subarray_series(geo, 4, 2.0, 140, 0.1);
  auto p = pipeline_params();
  p.frequencies = {3000};
  const auto provider = exact_csm_provider(point_scene(SourceKind::dipole));
  const auto a = directivity_pipeline(subs, provider, p);
  p.jobs = 3;
  const auto b = directivity_pipeline(subs, provider, p);
  EXPECT_EQ(a.surface.psd, b.surface.psd);
  EXPECT_EQ(a.surface.angles, b.surface.angles);
}

TEST(DirectivityPipeline, SingleSubArrayRejected) {
  const auto geo = full_build();
  const auto subs = pitch_subarray_series(geo, 1, 2.0, 140, 0.1);
  EXPECT_THROW(directivity_pipeline(subs, exact_csm_provider(point_scene(SourceKind::monopole)), pipeline_params()),
               DomainError);
}

TEST(DirectivityPipeline, RecordedCsmSubMatrices) {
  const auto geo = std::make_shared<const ArrayGeometry>(assemble_full_array(1, 1, 7));
  const auto subs = pitch_subarray_series(geo, 3, 0.8, 64, 0.1);
  const auto scene = point_scene(SourceKind::monopole);
  auto p = pipeline_params();
  p.frequencies = {4000};
  const auto direct = directivity_pipeline(subs, exact_csm_provider(scene), p);
  const auto recorded = synthesize_csm(scene, std::span<const Vec3>(geo->positions), p.frequencies);
  const auto via_recorded = directivity_pipeline(subs, recorded_csm_provider(recorded), p);
  EXPECT_LE((via_recorded.surface.psd - direct.surface.psd).cwiseAbs().maxCoeff(),
            1e-9 * direct.surface.psd.cwiseAbs().maxCoeff());
  p.frequencies = {4001};
  EXPECT_THROW(directivity_pipeline(subs, recorded_csm_provider(recorded), p), DomainError);
}
