#include "tibp/xcorr.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <numeric>

#include "tibp/error.hpp"

namespace tibp {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

int next_fast_size(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int p : {2, 3, 5, 7}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

// Real 2-D forward/inverse transform pair of a fixed padded size.
class RealFft2d {
 public:
  RealFft2d(int rows, int cols) : rows_(rows), cols_(cols), half_(cols / 2 + 1) {
    real_ = fftw_alloc_real(static_cast<std::size_t>(rows) * cols);
    spec_ = fftw_alloc_complex(static_cast<std::size_t>(rows) * half_);
    std::lock_guard<std::mutex> lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_2d(rows, cols, real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_2d(rows, cols, spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft2d() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t spectrum_size() const { return static_cast<std::size_t>(rows_) * half_; }

  // Zero-pads the h x w plane into the real buffer and transforms it.
  void forward(const double* plane, int h, int w, std::complex<double>* out) {
    std::fill(real_, real_ + static_cast<std::size_t>(rows_) * cols_, 0.0);
    for (int i = 0; i < h; ++i) {
      std::copy(plane + static_cast<std::size_t>(i) * w, plane + static_cast<std::size_t>(i + 1) * w,
                real_ + static_cast<std::size_t>(i) * cols_);
    }
    fftw_execute(forward_);
    const auto* s = reinterpret_cast<const std::complex<double>*>(spec_);
    std::copy(s, s + spectrum_size(), out);
  }

  // Unnormalized inverse; result left in real().
  void inverse(const std::complex<double>* in) {
    std::copy(in, in + spectrum_size(), reinterpret_cast<std::complex<double>*>(spec_));
    fftw_execute(inverse_);
  }
  const double* real() const { return real_; }

 private:
  int rows_, cols_, half_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

void check_finite(const Raster& r, const char* what) {
  for (double v : r.values) {
    if (!std::isfinite(v)) fail(ErrorKind::numeric, std::string("non-finite value in ") + what);
  }
}

// Reads lag (dy, dx) from a circular correlation buffer of the given size.
inline double circular_at(const double* buf, int rows, int cols, int dy, int dx) {
  const int r = dy < 0 ? dy + rows : dy;
  const int c = dx < 0 ? dx + cols : dx;
  return buf[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace

LagMap cross_correlate_full(const Raster& residual, const Raster& tmpl) {
  check_finite(residual, "residual");
  check_finite(tmpl, "template");
  const int H = residual.height, W = residual.width;
  const int h = tmpl.height, w = tmpl.width;
  LagMap out{H + h - 1, W + w - 1, -h + 1, -w + 1, {}};
  out.scores.resize(static_cast<std::size_t>(out.rows) * out.cols);
  RealFft2d fft(next_fast_size(out.rows), next_fast_size(out.cols));
  std::vector<std::complex<double>> R(fft.spectrum_size()), A(fft.spectrum_size());
  fft.forward(residual.values.data(), H, W, R.data());
  fft.forward(tmpl.values.data(), h, w, A.data());
  for (std::size_t i = 0; i < R.size(); ++i) R[i] *= std::conj(A[i]);
  fft.inverse(R.data());
  const double scale = 1.0 / (static_cast<double>(fft.rows()) * fft.cols());
  for (int dy = out.min_dy; dy < out.min_dy + out.rows; ++dy) {
    for (int dx = out.min_dx; dx < out.min_dx + out.cols; ++dx) {
      out.scores[static_cast<std::size_t>(dy - out.min_dy) * out.cols + (dx - out.min_dx)] =
          circular_at(fft.real(), fft.rows(), fft.cols(), dy, dx) * scale;
    }
  }
  return out;
}

LagMap brute_force_cross_correlate(const Raster& residual, const Raster& tmpl) {
  check_finite(residual, "residual");
  check_finite(tmpl, "template");
  const int H = residual.height, W = residual.width;
  const int h = tmpl.height, w = tmpl.width;
  LagMap out{H + h - 1, W + w - 1, -h + 1, -w + 1, {}};
  out.scores.assign(static_cast<std::size_t>(out.rows) * out.cols, 0.0);
  for (int dy = out.min_dy; dy < out.min_dy + out.rows; ++dy) {
    for (int dx = out.min_dx; dx < out.min_dx + out.cols; ++dx) {
      double s = 0.0;
      for (int i = 0; i < h; ++i) {
        const int y = i + dy;
        if (y < 0 || y >= H) continue;
        for (int j = 0; j < w; ++j) {
          const int x = j + dx;
          if (x < 0 || x >= W) continue;
          s += tmpl.values[static_cast<std::size_t>(i) * w + j] *
               residual.values[static_cast<std::size_t>(y) * W + x];
        }
      }
      out.scores[static_cast<std::size_t>(dy - out.min_dy) * out.cols + (dx - out.min_dx)] = s;
    }
  }
  return out;
}

TransformationProposal proposal_from_scores(const std::vector<double>& scores, double temperature) {
  if (scores.empty()) fail(ErrorKind::dimension, "empty transformation space");
  if (!(temperature > 0.0)) fail(ErrorKind::numeric, "proposal temperature must be positive");
  TransformationProposal p;
  p.log_prob.resize(scores.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorKind::numeric, "non-finite correlation score");
    p.log_prob[i] = scores[i] / temperature;
    top = std::max(top, p.log_prob[i]);
  }
  double sum = 0.0;
  for (double& v : p.log_prob) {
    v -= top;
    sum += std::exp(v);
  }
  p.log_normalizer = std::log(sum);
  p.prob.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p.log_prob[i] -= p.log_normalizer;
    p.prob[i] = std::exp(p.log_prob[i]);
  }
  return p;
}

std::vector<double> correlation_scores(const Raster& residual, const FeatureCanvas& canvas,
                                       const TransformationSpace& space) {
  if (residual.height != space.image_height() || residual.width != space.image_width() ||
      residual.channels != canvas.channels || canvas.height != space.canvas_height() ||
      canvas.width != space.canvas_width()) {
    fail(ErrorKind::dimension, "residual, feature and transformation space disagree in shape");
  }
  std::vector<double> scores(static_cast<std::size_t>(space.size()), 0.0);
  for (const auto& pair : space.pairs()) {
    const FeatureCanvas moved =
        rotate_scale_canvas(canvas, space.rotations()[pair.rotation], space.scales()[pair.scale]);
    for (int c = 0; c < canvas.channels; ++c) {
      Raster res_c(residual.height, residual.width, 1);
      std::copy(residual.channel(c).begin(), residual.channel(c).end(), res_c.values.begin());
      Raster tpl_c(moved.height, moved.width, 1);
      std::copy(moved.channel(c).begin(), moved.channel(c).end(), tpl_c.values.begin());
      const LagMap lag = cross_correlate_full(res_c, tpl_c);
      int idx = pair.offset;
      for (int dy = pair.min_dy; dy <= pair.max_dy; ++dy) {
        for (int dx = pair.min_dx; dx <= pair.max_dx; ++dx) scores[idx++] += lag.at(dy, dx);
      }
    }
  }
  return scores;
}

TransformationProposal transformation_proposal(const Raster& residual, const FeatureCanvas& canvas,
                                               const TransformationSpace& space,
                                               double temperature) {
  return proposal_from_scores(correlation_scores(residual, canvas, space), temperature);
}

int inverse_cdf_index(const TransformationProposal& proposal, double u) {
  double cum = 0.0;
  for (int i = 0; i < proposal.size(); ++i) {
    cum += proposal.prob[i];
    if (u < cum) return i;
  }
  // Rounding can leave the total a hair under 1; fall back to the last
  // transformation with positive mass.
  for (int i = proposal.size() - 1; i >= 0; --i) {
    if (proposal.prob[i] > 0.0) return i;
  }
  return proposal.size() - 1;
}

std::pair<Transformation, double> sample_transformation(const TransformationProposal& proposal,
                                                        const TransformationSpace& space,
                                                        Rng& rng) {
  const int i = inverse_cdf_index(proposal, rng.uniform());
  return {space.at(i), proposal.log_prob[i]};
}

// ---------------------------------------------------------------------------

struct ProposalEngine::Impl {
  struct Entry {
    std::uint64_t version = 0;
    std::vector<std::vector<std::complex<double>>> spectra;  // [pair * C + c]
  };

  Impl(int rows, int cols, int C) : fft(rows, cols), channels(C) {}

  RealFft2d fft;
  int channels;
  std::unordered_map<int, Entry> cache;
  std::vector<std::vector<std::complex<double>>> residual_spectra;
  std::vector<std::complex<double>> accum;
};

ProposalEngine::ProposalEngine(const TransformationSpace& space, int channels, double temperature)
    : space_(space), temperature_(temperature) {
  const int rows = next_fast_size(space.image_height() + space.max_transformed_height() - 1);
  const int cols = next_fast_size(space.image_width() + space.max_transformed_width() - 1);
  impl_ = std::make_unique<Impl>(rows, cols, channels);
}

ProposalEngine::~ProposalEngine() = default;
ProposalEngine::ProposalEngine(ProposalEngine&&) noexcept = default;
ProposalEngine& ProposalEngine::operator=(ProposalEngine&&) noexcept = default;

void ProposalEngine::clear_cache() { impl_->cache.clear(); }

std::vector<double> ProposalEngine::scores(const Raster& residual, const FeatureCanvas& canvas,
                                           int feature_id, std::uint64_t version) {
  auto& im = *impl_;
  const int C = im.channels;
  if (residual.height != space_.image_height() || residual.width != space_.image_width() ||
      residual.channels != C || canvas.channels != C || canvas.height != space_.canvas_height() ||
      canvas.width != space_.canvas_width()) {
    fail(ErrorKind::dimension, "residual, feature and transformation space disagree in shape");
  }
  const std::size_t S = im.fft.spectrum_size();
  const auto& pairs = space_.pairs();

  if (im.cache.size() > 256) im.cache.clear();
  auto it = im.cache.find(feature_id);
  if (it == im.cache.end() || it->second.version != version) {
    Impl::Entry e;
    e.version = version;
    e.spectra.resize(pairs.size() * C);
    std::vector<double> plane;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& map = pairs[p].map;
      plane.resize(map.source.size());
      for (int c = 0; c < C; ++c) {
        const auto src = canvas.channel(c);
        for (std::size_t q = 0; q < map.source.size(); ++q) plane[q] = src[map.source[q]];
        auto& spec = e.spectra[p * C + c];
        spec.resize(S);
        im.fft.forward(plane.data(), map.height, map.width, spec.data());
        for (auto& v : spec) v = std::conj(v);
      }
    }
    it = im.cache.insert_or_assign(feature_id, std::move(e)).first;
  }
  const auto& entry = it->second;

  im.residual_spectra.resize(C);
  for (int c = 0; c < C; ++c) {
    im.residual_spectra[c].resize(S);
    im.fft.forward(residual.channel(c).data(), residual.height, residual.width,
                   im.residual_spectra[c].data());
  }

  std::vector<double> out(static_cast<std::size_t>(space_.size()));
  im.accum.resize(S);
  const double norm = 1.0 / (static_cast<double>(im.fft.rows()) * im.fft.cols());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    std::fill(im.accum.begin(), im.accum.end(), std::complex<double>());
    for (int c = 0; c < C; ++c) {
      const auto& a = entry.spectra[p * C + c];
      const auto& r = im.residual_spectra[c];
      for (std::size_t i = 0; i < S; ++i) im.accum[i] += r[i] * a[i];
    }
    im.fft.inverse(im.accum.data());
    const auto& pair = pairs[p];
    int idx = pair.offset;
    for (int dy = pair.min_dy; dy <= pair.max_dy; ++dy) {
      for (int dx = pair.min_dx; dx <= pair.max_dx; ++dx) {
        const double v = circular_at(im.fft.real(), im.fft.rows(), im.fft.cols(), dy, dx) * norm;
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite correlation score");
        out[idx++] = v;
      }
    }
  }
  return out;
}

TransformationProposal ProposalEngine::propose(const Raster& residual, const FeatureCanvas& canvas,
                                               int feature_id, std::uint64_t version) {
  return proposal_from_scores(scores(residual, canvas, feature_id, version), temperature_);
}

}  // namespace tibp
