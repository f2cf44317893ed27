#include "cascade/fad.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cascade/error.hpp"

namespace cascade {

EmbeddingVector embed(const Waveform& w, const DspConfig& cfg) {
  const MelSpectrogram mel = melspec(w, cfg);
  EmbeddingVector v;
  v.values.resize(static_cast<size_t>(2 * mel.mel_bins));
  for (int m = 0; m < mel.mel_bins; ++m) {
    double mean = 0.0;
    for (int t = 0; t < mel.frames; ++t) mean += mel.at(m, t);
    mean /= static_cast<double>(mel.frames);
    double var = 0.0;
    for (int t = 0; t < mel.frames; ++t) {
      const double d = mel.at(m, t) - mean;
      var += d * d;
    }
    var /= static_cast<double>(mel.frames);
    v.values[static_cast<size_t>(m)] = mean;
    v.values[static_cast<size_t>(mel.mel_bins + m)] = std::sqrt(var);
  }
  return v;
}

GaussianStats fit_gaussian(const std::vector<EmbeddingVector>& vectors) {
  if (vectors.size() < 2) {
    throw ConfigError("fit_gaussian: need at least 2 vectors, got " +
                      std::to_string(vectors.size()));
  }
  const int d = static_cast<int>(vectors[0].values.size());
  for (const auto& v : vectors) {
    if (static_cast<int>(v.values.size()) != d) {
      throw DimensionError("fit_gaussian: inconsistent embedding dimensions");
    }
  }
  GaussianStats g;
  g.dim = d;
  g.count = static_cast<int64_t>(vectors.size());
  g.mu.assign(static_cast<size_t>(d), 0.0);
  for (const auto& v : vectors) {
    for (int i = 0; i < d; ++i) g.mu[static_cast<size_t>(i)] += v.values[static_cast<size_t>(i)];
  }
  for (auto& m : g.mu) m /= static_cast<double>(g.count);

  g.sigma.assign(static_cast<size_t>(d) * d, 0.0);
  for (const auto& v : vectors) {
    for (int i = 0; i < d; ++i) {
      const double di = v.values[static_cast<size_t>(i)] - g.mu[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j) {
        const double dj = v.values[static_cast<size_t>(j)] - g.mu[static_cast<size_t>(j)];
        g.sigma[static_cast<size_t>(i) * d + j] += di * dj;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(g.count - 1);
  for (auto& s : g.sigma) s *= inv;
  // exact symmetry
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double avg =
          0.5 * (g.sigma[static_cast<size_t>(i) * d + j] + g.sigma[static_cast<size_t>(j) * d + i]);
      g.sigma[static_cast<size_t>(i) * d + j] = avg;
      g.sigma[static_cast<size_t>(j) * d + i] = avg;
    }
  }
  return g;
}

std::vector<double> jacobi_eigen(const std::vector<double>& matrix, int n,
                                 std::vector<double>* eigenvectors_out) {
  std::vector<double> a = matrix;
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a[static_cast<size_t>(i) * n + i]));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scale = std::max(scale, std::fabs(a[static_cast<size_t>(i) * n + j]));
  const double tol = 1e-12 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[static_cast<size_t>(i) * n + j] * a[static_cast<size_t>(i) * n + j];
    if (std::sqrt(off) < tol) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (std::fabs(apq) < tol * 1e-3) continue;
        const double app = a[static_cast<size_t>(p) * n + p];
        const double aqq = a[static_cast<size_t>(q) * n + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<size_t>(p) * n + k];
          const double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[static_cast<size_t>(k) * n + p];
          const double vkq = v[static_cast<size_t>(k) * n + q];
          v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
  if (eigenvectors_out) *eigenvectors_out = std::move(v);
  return eig;
}

namespace {

// B = V diag(f(lambda)) V^T for symmetric input.
std::vector<double> symmetric_apply(const std::vector<double>& matrix, int n,
                                    double (*fn)(double), const char* what) {
  std::vector<double> vecs;
  std::vector<double> eig = jacobi_eigen(matrix, n, &vecs);
  for (auto& l : eig) {
    if (l < -1e-6) {
      throw NumericalError(std::string(what) + ": eigenvalue " + std::to_string(l) +
                           " below -1e-6, matrix not PSD");
    }
    l = fn(std::max(l, 0.0));
  }
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        acc += vecs[static_cast<size_t>(i) * n + k] * eig[static_cast<size_t>(k)] *
               vecs[static_cast<size_t>(j) * n + k];
      }
      out[static_cast<size_t>(i) * n + j] = acc;
    }
  }
  return out;
}

std::vector<double> matmul_sym(const std::vector<double>& a, const std::vector<double>& b, int n) {
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double av = a[static_cast<size_t>(i) * n + k];
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += av * b[static_cast<size_t>(k) * n + j];
    }
  return out;
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim) {
    throw DimensionError("frechet_distance: dims " + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim));
  }
  const int n = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a.mu[static_cast<size_t>(i)] - b.mu[static_cast<size_t>(i)];
    mean_term += d * d;
  }
  const std::vector<double> a_half =
      symmetric_apply(a.sigma, n, [](double x) { return std::sqrt(x); }, "frechet sqrt(Sa)");
  std::vector<double> inner = matmul_sym(matmul_sym(a_half, b.sigma, n), a_half, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double avg =
          0.5 * (inner[static_cast<size_t>(i) * n + j] + inner[static_cast<size_t>(j) * n + i]);
      inner[static_cast<size_t>(i) * n + j] = avg;
      inner[static_cast<size_t>(j) * n + i] = avg;
    }
  }
  std::vector<double> eig = jacobi_eigen(inner, n, nullptr);
  double trace_sqrt = 0.0;
  for (double l : eig) {
    if (l < -1e-6) {
      throw NumericalError("frechet_distance: inner eigenvalue " + std::to_string(l) +
                           " below -1e-6");
    }
    trace_sqrt += std::sqrt(std::max(l, 0.0));
  }
  double trace_a = 0.0, trace_b = 0.0;
  for (int i = 0; i < n; ++i) {
    trace_a += a.sigma[static_cast<size_t>(i) * n + i];
    trace_b += b.sigma[static_cast<size_t>(i) * n + i];
  }
  return std::max(0.0, mean_term + trace_a + trace_b - 2.0 * trace_sqrt);
}

FadReport evaluate_fad(const std::map<SoundClass, std::vector<EmbeddingVector>>& gen,
                       const std::map<SoundClass, std::vector<EmbeddingVector>>& ref) {
  FadReport report;
  double sum = 0.0;
  for (SoundClass cls : all_sound_classes()) {
    const bool relevant = gen.count(cls) || ref.count(cls);
    if (!relevant) continue;
    FadReport::Row row;
    row.cls = cls;
    const auto gi = gen.find(cls);
    const auto ri = ref.find(cls);
    if (gi == gen.end() || ri == ref.end() || gi->second.size() < 2 || ri->second.size() < 2) {
      report.warnings.push_back("class " + sound_class_name(cls) +
                                " missing or too small on one side; excluded from average");
      report.rows.push_back(row);
      continue;
    }
    row.present = true;
    row.fad = frechet_distance(fit_gaussian(gi->second), fit_gaussian(ri->second));
    sum += row.fad;
    ++report.classes_used;
    report.rows.push_back(row);
  }
  report.average = report.classes_used > 0 ? sum / report.classes_used : 0.0;
  return report;
}

std::string FadReport::to_text() const {
  std::ostringstream os;
  os << "FAD (embedding: " << kEmbeddingName << ")\n";
  os << "----------------------------------------\n";
  for (const auto& row : rows) {
    os << "  " << sound_class_label(row.cls);
    for (size_t pad = sound_class_label(row.cls).size(); pad < 16; ++pad) os << ' ';
    if (row.present) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%10.4f", row.fad);
      os << buf << "\n";
    } else {
      os << "    absent\n";
    }
  }
  os << "----------------------------------------\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%10.4f", average);
  os << "  Average         " << buf << "  (" << classes_used << " classes)\n";
  for (const auto& w : warnings) os << "  warning: " << w << "\n";
  return os.str();
}

void FadReport::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write FAD csv: " + path);
  os << "class,fad,embedding\n";
  os.precision(10);
  for (const auto& row : rows) {
    os << sound_class_name(row.cls) << ",";
    if (row.present) {
      os << row.fad;
    } else {
      os << "absent";
    }
    os << "," << kEmbeddingName << "\n";
  }
  os << "average," << average << "," << kEmbeddingName << "\n";
}

}  // namespace cascade
