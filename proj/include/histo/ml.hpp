#ifndef HISTO_ML_HPP
#define HISTO_ML_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace histo {
namespace ml {

using Matrix = std::vector<std::vector<double>>;  // rows = samples

// ---------------------------------------------------------------------------
// L1-regularized (multinomial) logistic regression
// ---------------------------------------------------------------------------

struct LinearModel {
  Matrix weights;              // [class][feature]
  std::vector<double> bias;    // [class]
  double lambda = 0.0;

  int num_classes() const { return static_cast<int>(weights.size()); }
  int num_features() const { return weights.empty() ? 0 : static_cast<int>(weights[0].size()); }
};

/// Mean softmax cross-entropy over (X, y) plus analytic gradients of the
/// smooth part. Exposed so the gradient can be checked against finite
/// differences.
double softmax_loss_and_grad(const Matrix& X, const std::vector<int>& y, const LinearModel& model,
                             Matrix* grad_w, std::vector<double>* grad_b);

/// Proximal map of eta*lambda*|w|: shrinks each weight toward zero by
/// min(|w|, eta*lambda).
double soft_threshold(double w, double amount);

/// Proximal gradient descent on mean cross-entropy + lambda*||W||_1 (bias
/// unregularized). Step size backtracks by halving from `step` until the full
/// objective does not increase, so the objective trace is non-increasing.
/// Training is deterministic; `seed` is accepted for interface uniformity.
/// num_classes -1 infers max(y)+1; pass it explicitly when a class may be
/// absent from the training labels but must exist in the output distribution.
LinearModel train_logistic_l1(const Matrix& X, const std::vector<int>& y, double lambda,
                              int epochs, double step, std::uint64_t seed,
                              std::vector<double>* objective_trace = nullptr,
                              int num_classes = -1);

std::vector<double> predict_logistic(const LinearModel& model, const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Gradient boosting machine (softmax loss, one tree sequence per class)
// ---------------------------------------------------------------------------

/// Flat binary regression tree; node 0 is the root.
struct TreeNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(const std::vector<double>& x) const;
};

struct GbmModel {
  int num_classes = 0;
  int max_depth = 0;
  double learning_rate = 0.0;
  std::vector<double> init_scores;                   // [class], log prior
  std::vector<std::vector<RegressionTree>> trees;     // [round][class], leaf values pre-scaled

  int num_rounds() const { return static_cast<int>(trees.size()); }
};

/// Boosted trees on the softmax loss. Each round fits one depth-limited
/// least-squares tree per class to the negative gradient using exact greedy
/// variance-reduction splits (ties: lowest feature index, then lowest
/// threshold). The round's contribution is halved until the training log-loss
/// does not increase, which makes the per-round loss trace monotone.
GbmModel train_gbm(const Matrix& X, const std::vector<int>& y, int num_estimators = 280,
                   int max_depth = 4, double learning_rate = 0.9, std::uint64_t seed = 0,
                   std::vector<double>* loss_trace = nullptr, int num_classes = -1);

std::vector<double> predict_gbm(const GbmModel& model, const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Linear SVM (hinge loss, primal subgradient descent)
// ---------------------------------------------------------------------------

struct SvmModel {
  std::vector<double> weights;
  double bias = 0.0;
  double c = 1.0;
};

/// 0.5*||w||^2 + C * sum hinge(y * (w.x + b)). Objective used for tests.
double svm_objective(const SvmModel& model, const Matrix& X, const std::vector<int>& y);

/// Epoch-shuffled Pegasos-style subgradient descent, step 1/(lambda*t) with
/// lambda = 1/(N*C); the returned model averages all iterates.
SvmModel train_svm(const Matrix& X, const std::vector<int>& y, double c, int epochs,
                   std::uint64_t seed);

double svm_decision(const SvmModel& model, const std::vector<double>& x);
int svm_predict(const SvmModel& model, const std::vector<double>& x);  // returns -1 or +1

// ---------------------------------------------------------------------------
// Persistence (versioned structured text, full double precision)
// ---------------------------------------------------------------------------

void save_model(const LinearModel& model, const std::string& path);
void save_model(const GbmModel& model, const std::string& path);
void save_model(const SvmModel& model, const std::string& path);

LinearModel load_linear_model(const std::string& path);
GbmModel load_gbm_model(const std::string& path);
SvmModel load_svm_model(const std::string& path);

// Stream-level forms so composite bundles can embed models in one file.
void write_linear_model(std::ostream& out, const LinearModel& model);
void write_gbm_model(std::ostream& out, const GbmModel& model);
void write_svm_model(std::ostream& out, const SvmModel& model);
LinearModel read_linear_model(std::istream& in);
GbmModel read_gbm_model(std::istream& in);
SvmModel read_svm_model(std::istream& in);

}  // namespace ml
}  // namespace histo

#endif  // HISTO_ML_HPP
