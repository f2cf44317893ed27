#pragma once

#include <map>
#include <string>
#include <vector>

#include "cascade/dsp.hpp"
#include "cascade/prompt.hpp"

namespace cascade {

// Log-mel statistics embedding: per-band temporal mean and standard
// deviation, D = 2 * mel_bins. A documented stand-in for the pre-trained
// embedding network of the official tool; absolute values are not
// comparable with published FAD tables.
inline constexpr const char* kEmbeddingName = "logmel-stats";

struct EmbeddingVector {
  std::vector<double> values;
};

struct GaussianStats {
  std::vector<double> mu;     // [D]
  std::vector<double> sigma;  // [D*D], symmetric
  int dim = 0;
  int64_t count = 0;
};

EmbeddingVector embed(const Waveform& w, const DspConfig& cfg);

// Sample mean and unbiased covariance; symmetry enforced by (S+S^T)/2.
// Fewer than 2 vectors is an error.
GaussianStats fit_gaussian(const std::vector<EmbeddingVector>& vectors);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), matrix square root by
// Jacobi eigen-decomposition of Sa^{1/2} Sb Sa^{1/2}. Eigenvalues below
// -1e-6 raise NumericalError; small negatives clamp to 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Symmetric eigen-decomposition (cyclic Jacobi). Returns eigenvalues;
// eigenvectors_out columns (row-major [n*n]) when non-null.
std::vector<double> jacobi_eigen(const std::vector<double>& matrix, int n,
                                 std::vector<double>* eigenvectors_out);

struct FadReport {
  struct Row {
    SoundClass cls;
    bool present = false;
    double fad = 0.0;
  };
  std::vector<Row> rows;  // evaluation-table class order
  double average = 0.0;
  int classes_used = 0;
  std::vector<std::string> warnings;

  std::string to_text() const;
  void write_csv(const std::string& path) const;
};

// Per-class FAD between generated and reference embedding sets; classes
// missing on either side are reported absent and excluded from the average.
FadReport evaluate_fad(const std::map<SoundClass, std::vector<EmbeddingVector>>& gen,
                       const std::map<SoundClass, std::vector<EmbeddingVector>>& ref);

}  // namespace cascade
