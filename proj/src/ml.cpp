#include "histo/ml.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "histo/util.hpp"

namespace histo {
namespace ml {

namespace {

// log(0) stand-in that still survives exp() arithmetic (underflows to 0).
constexpr double kLogZero = -745.0;

void softmax_inplace(std::vector<double>& scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    sum += s;
  }
  for (double& s : scores) s /= sum;
}

int infer_classes(const std::vector<int>& y, int num_classes) {
  int max_label = -1;
  std::set<int> distinct;
  for (int label : y) {
    if (label < 0) throw std::invalid_argument("negative class label");
    max_label = std::max(max_label, label);
    distinct.insert(label);
  }
  if (distinct.size() < 2)
    throw DegenerateTrainingError("training set must contain at least two classes");
  const int k = num_classes < 0 ? max_label + 1 : num_classes;
  if (max_label >= k) throw std::invalid_argument("class label exceeds num_classes");
  return k;
}

void check_design(const Matrix& X, const std::vector<int>& y) {
  if (X.empty()) throw std::invalid_argument("empty training set");
  if (X.size() != y.size()) throw std::invalid_argument("X and y row counts differ");
  const std::size_t f = X[0].size();
  if (f == 0) throw std::invalid_argument("zero-dimensional features");
  for (const auto& row : X)
    if (row.size() != f) throw std::invalid_argument("ragged feature matrix");
}

double l1_norm(const Matrix& w) {
  double total = 0.0;
  for (const auto& row : w)
    for (double v : row) total += std::abs(v);
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

double softmax_loss_and_grad(const Matrix& X, const std::vector<int>& y, const LinearModel& model,
                             Matrix* grad_w, std::vector<double>* grad_b) {
  const int k = model.num_classes();
  const int f = model.num_features();
  const std::size_t n = X.size();
  if (n == 0 || y.size() != n) throw std::invalid_argument("bad design matrix");

  if (grad_w) grad_w->assign(k, std::vector<double>(f, 0.0));
  if (grad_b) grad_b->assign(k, 0.0);

  double loss = 0.0;
  std::vector<double> scores(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<int>(X[i].size()) != f) throw std::invalid_argument("feature dimension mismatch");
    if (y[i] < 0 || y[i] >= k) throw std::invalid_argument("label out of range");
    for (int c = 0; c < k; ++c) {
      double s = model.bias[c];
      for (int j = 0; j < f; ++j) s += model.weights[c][j] * X[i][j];
      scores[c] = s;
    }
    softmax_inplace(scores);
    loss += -std::log(std::max(scores[y[i]], 1e-300));
    if (grad_w || grad_b) {
      for (int c = 0; c < k; ++c) {
        const double g = scores[c] - (c == y[i] ? 1.0 : 0.0);
        if (grad_b) (*grad_b)[c] += g;
        if (grad_w)
          for (int j = 0; j < f; ++j) (*grad_w)[c][j] += g * X[i][j];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  if (grad_w)
    for (auto& row : *grad_w)
      for (double& v : row) v *= inv_n;
  if (grad_b)
    for (double& v : *grad_b) v *= inv_n;
  return loss;
}

double soft_threshold(double w, double amount) {
  if (w > amount) return w - amount;
  if (w < -amount) return w + amount;
  return 0.0;
}

LinearModel train_logistic_l1(const Matrix& X, const std::vector<int>& y, double lambda,
                              int epochs, double step, std::uint64_t /*seed*/,
                              std::vector<double>* objective_trace, int num_classes) {
  check_design(X, y);
  const int k = infer_classes(y, num_classes);
  const int f = static_cast<int>(X[0].size());

  LinearModel model;
  model.lambda = lambda;
  model.weights.assign(k, std::vector<double>(f, 0.0));
  model.bias.assign(k, 0.0);

  Matrix grad_w;
  std::vector<double> grad_b;
  double objective = softmax_loss_and_grad(X, y, model, &grad_w, &grad_b) + lambda * l1_norm(model.weights);
  if (objective_trace) objective_trace->push_back(objective);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    double eta = step;
    bool accepted = false;
    LinearModel candidate = model;
    for (int halving = 0; halving < 60; ++halving, eta *= 0.5) {
      for (int c = 0; c < k; ++c) {
        for (int j = 0; j < f; ++j)
          candidate.weights[c][j] =
              soft_threshold(model.weights[c][j] - eta * grad_w[c][j], eta * lambda);
        candidate.bias[c] = model.bias[c] - eta * grad_b[c];
      }
      const double cand_objective =
          softmax_loss_and_grad(X, y, candidate, nullptr, nullptr) + lambda * l1_norm(candidate.weights);
      if (cand_objective <= objective) {
        model = candidate;
        objective = cand_objective;
        accepted = true;
        break;
      }
    }
    if (objective_trace) objective_trace->push_back(objective);
    if (!accepted) break;  // no step improves: stationary under this search
    softmax_loss_and_grad(X, y, model, &grad_w, &grad_b);
  }
  return model;
}

std::vector<double> predict_logistic(const LinearModel& model, const std::vector<double>& x) {
  const int k = model.num_classes();
  const int f = model.num_features();
  if (static_cast<int>(x.size()) != f)
    throw std::invalid_argument("feature dimension mismatch in predict_logistic");
  std::vector<double> scores(k);
  for (int c = 0; c < k; ++c) {
    double s = model.bias[c];
    for (int j = 0; j < f; ++j) s += model.weights[c][j] * x[j];
    scores[c] = s;
  }
  softmax_inplace(scores);
  return scores;
}

// ---------------------------------------------------------------------------
// Gradient boosting
// ---------------------------------------------------------------------------

double RegressionTree::predict(const std::vector<double>& x) const {
  int node = 0;
  while (!nodes[node].leaf) {
    const TreeNode& s = nodes[node];
    if (s.feature >= static_cast<int>(x.size()))
      throw std::invalid_argument("feature dimension mismatch in tree predict");
    node = x[s.feature] <= s.threshold ? s.left : s.right;
  }
  return nodes[node].value;
}

namespace {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Exact greedy split maximizing variance reduction; ties keep the lowest
// feature index, then the lowest threshold (scan order guarantees both).
SplitChoice best_split(const Matrix& X, const std::vector<double>& targets,
                       const std::vector<int>& idx) {
  SplitChoice best;
  const std::size_t n = idx.size();
  if (n < 2) return best;
  const int f = static_cast<int>(X[0].size());

  double total = 0.0;
  for (int i : idx) total += targets[i];

  std::vector<std::pair<double, int>> order(n);
  for (int feature = 0; feature < f; ++feature) {
    for (std::size_t j = 0; j < n; ++j) order[j] = {X[idx[j]][feature], idx[j]};
    std::sort(order.begin(), order.end());

    double left_sum = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) {
      left_sum += targets[order[j].second];
      if (order[j].first == order[j + 1].first) continue;  // same value, no cut here
      const double nl = static_cast<double>(j + 1);
      const double nr = static_cast<double>(n - j - 1);
      const double right_sum = total - left_sum;
      const double gain =
          left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / static_cast<double>(n);
      if (gain > best.gain + 1e-12) {
        best.found = true;
        best.feature = feature;
        best.threshold = 0.5 * (order[j].first + order[j + 1].first);
        best.gain = gain;
      }
    }
  }
  return best;
}

int build_tree(RegressionTree& tree, const Matrix& X, const std::vector<double>& targets,
               const std::vector<int>& idx, int depth, int max_depth) {
  const int node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();

  double mean = 0.0;
  for (int i : idx) mean += targets[i];
  mean /= static_cast<double>(idx.size());

  SplitChoice split;
  if (depth < max_depth) split = best_split(X, targets, idx);
  if (!split.found) {
    tree.nodes[node_id].value = mean;
    return node_id;
  }

  std::vector<int> left_idx, right_idx;
  for (int i : idx)
    (X[i][split.feature] <= split.threshold ? left_idx : right_idx).push_back(i);

  tree.nodes[node_id].leaf = false;
  tree.nodes[node_id].feature = split.feature;
  tree.nodes[node_id].threshold = split.threshold;
  const int left = build_tree(tree, X, targets, left_idx, depth + 1, max_depth);
  const int right = build_tree(tree, X, targets, right_idx, depth + 1, max_depth);
  tree.nodes[node_id].left = left;
  tree.nodes[node_id].right = right;
  return node_id;
}

double gbm_log_loss(const std::vector<std::vector<double>>& scores, const std::vector<int>& y) {
  double loss = 0.0;
  std::vector<double> p;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p = scores[i];
    softmax_inplace(p);
    loss += -std::log(std::max(p[y[i]], 1e-300));
  }
  return loss / static_cast<double>(scores.size());
}

}  // namespace

GbmModel train_gbm(const Matrix& X, const std::vector<int>& y, int num_estimators, int max_depth,
                   double learning_rate, std::uint64_t /*seed*/, std::vector<double>* loss_trace,
                   int num_classes) {
  check_design(X, y);
  if (num_estimators < 0) throw std::invalid_argument("num_estimators must be >= 0");
  if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
  const int k = infer_classes(y, num_classes);
  const std::size_t n = X.size();

  GbmModel model;
  model.num_classes = k;
  model.max_depth = max_depth;
  model.learning_rate = learning_rate;
  model.init_scores.assign(k, 0.0);
  {
    std::vector<double> counts(k, 0.0);
    for (int label : y) counts[label] += 1.0;
    for (int c = 0; c < k; ++c)
      model.init_scores[c] =
          counts[c] > 0.0 ? std::log(counts[c] / static_cast<double>(n)) : kLogZero;
  }

  std::vector<std::vector<double>> scores(n, model.init_scores);
  double loss = gbm_log_loss(scores, y);
  if (loss_trace) loss_trace->push_back(loss);

  std::vector<int> all_idx(n);
  std::iota(all_idx.begin(), all_idx.end(), 0);
  std::vector<double> residual(n);

  for (int round = 0; round < num_estimators; ++round) {
    std::vector<RegressionTree> round_trees(k);
    std::vector<std::vector<double>> tree_out(k, std::vector<double>(n));
    for (int c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> p = scores[i];
        softmax_inplace(p);
        residual[i] = (y[i] == c ? 1.0 : 0.0) - p[c];
      }
      build_tree(round_trees[c], X, residual, all_idx, 0, max_depth);
      for (std::size_t i = 0; i < n; ++i) tree_out[c][i] = round_trees[c].predict(X[i]);
    }

    // Scale the round until the loss does not increase; eta 0 (a dead round)
    // is the fallback, so the loss trace is non-increasing by construction.
    double eta = 1.0;
    double accepted_eta = 0.0;
    double accepted_loss = loss;
    std::vector<std::vector<double>> trial = scores;
    for (int halving = 0; halving < 40; ++halving, eta *= 0.5) {
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c) trial[i][c] = scores[i][c] + learning_rate * eta * tree_out[c][i];
      const double trial_loss = gbm_log_loss(trial, y);
      if (trial_loss <= loss) {
        accepted_eta = eta;
        accepted_loss = trial_loss;
        std::swap(scores, trial);
        break;
      }
    }
    loss = accepted_loss;
    if (loss_trace) loss_trace->push_back(loss);

    const double scale = learning_rate * accepted_eta;
    for (int c = 0; c < k; ++c)
      for (TreeNode& node : round_trees[c].nodes)
        if (node.leaf) node.value *= scale;
    model.trees.push_back(std::move(round_trees));
  }
  return model;
}

std::vector<double> predict_gbm(const GbmModel& model, const std::vector<double>& x) {
  std::vector<double> scores = model.init_scores;
  for (const auto& round : model.trees)
    for (int c = 0; c < model.num_classes; ++c) scores[c] += round[c].predict(x);
  softmax_inplace(scores);
  return scores;
}

// ---------------------------------------------------------------------------
// Linear SVM
// ---------------------------------------------------------------------------

double svm_objective(const SvmModel& model, const Matrix& X, const std::vector<int>& y) {
  double w2 = 0.0;
  for (double v : model.weights) w2 += v * v;
  double hinge = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i)
    hinge += std::max(0.0, 1.0 - y[i] * svm_decision(model, X[i]));
  return 0.5 * w2 + model.c * hinge;
}

SvmModel train_svm(const Matrix& X, const std::vector<int>& y, double c, int epochs,
                   std::uint64_t seed) {
  check_design(X, y);
  if (c <= 0.0) throw std::invalid_argument("C must be > 0");
  bool has_pos = false, has_neg = false;
  for (int label : y) {
    if (label == 1) has_pos = true;
    else if (label == -1) has_neg = true;
    else throw std::invalid_argument("SVM labels must be -1 or +1");
  }
  if (!has_pos || !has_neg)
    throw DegenerateTrainingError("SVM training requires both labels");

  const std::size_t n = X.size();
  const int f = static_cast<int>(X[0].size());
  const double lambda = 1.0 / (static_cast<double>(n) * c);

  // Step sizes follow 1/(lambda * (t0 + t)); the t0 offset keeps the first
  // steps bounded by c so the unregularized bias cannot be thrown far off.
  const double t0 = static_cast<double>(n);
  const std::uint64_t total = static_cast<std::uint64_t>(epochs) * n;
  const std::uint64_t tail_start = total - total / 2;  // average the last half

  std::vector<double> w(f, 0.0), w_sum(f, 0.0);
  double b = 0.0, b_sum = 0.0;
  std::uint64_t t = 0, averaged = 0;

  Rng rng(seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (int i : order) {
      ++t;
      const double clock = t0 + static_cast<double>(t);
      const double eta = 1.0 / (lambda * clock);
      double margin = b;
      for (int j = 0; j < f; ++j) margin += w[j] * X[i][j];
      margin *= y[i];

      const double shrink = 1.0 - 1.0 / clock;  // = 1 - eta*lambda
      for (int j = 0; j < f; ++j) w[j] *= shrink;
      if (margin < 1.0) {
        const double step = eta * y[i];
        for (int j = 0; j < f; ++j) w[j] += step * X[i][j];
        b += step;
      }
      if (t >= tail_start) {
        for (int j = 0; j < f; ++j) w_sum[j] += w[j];
        b_sum += b;
        ++averaged;
      }
    }
  }

  SvmModel model;
  model.c = c;
  model.weights.assign(f, 0.0);
  if (averaged > 0) {
    for (int j = 0; j < f; ++j) model.weights[j] = w_sum[j] / static_cast<double>(averaged);
    model.bias = b_sum / static_cast<double>(averaged);
  }
  return model;
}

double svm_decision(const SvmModel& model, const std::vector<double>& x) {
  if (x.size() != model.weights.size())
    throw std::invalid_argument("feature dimension mismatch in svm_decision");
  double s = model.bias;
  for (std::size_t j = 0; j < x.size(); ++j) s += model.weights[j] * x[j];
  return s;
}

int svm_predict(const SvmModel& model, const std::vector<double>& x) {
  return svm_decision(model, x) >= 0.0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFileMagic = "histopipe-model 1";

void check_stream_header(std::istream& in, const char* kind) {
  std::string name, version;
  in >> name >> version;
  if (!in || name != kind || version != "1")
    throw FormatVersionError(std::string("expected '") + kind + " 1' model section, got '" + name +
                             " " + version + "'");
}

template <typename WriteBody>
void save_with_magic(const std::string& path, WriteBody body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << kFileMagic << "\n";
  body(out);
  if (!out) throw std::runtime_error("short write to model file: " + path);
}

std::ifstream open_with_magic(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kFileMagic)
    throw FormatVersionError("not a '" + std::string(kFileMagic) + "' file: " + path);
  return in;
}

}  // namespace

void write_linear_model(std::ostream& out, const LinearModel& model) {
  out << "linear 1\n";
  out << "dims " << model.num_classes() << " " << model.num_features() << "\n";
  out << "lambda " << format_double(model.lambda) << "\n";
  out << "bias";
  for (double v : model.bias) out << " " << format_double(v);
  out << "\n";
  for (const auto& row : model.weights) {
    out << "w";
    for (double v : row) out << " " << format_double(v);
    out << "\n";
  }
  out << "end linear\n";
}

LinearModel read_linear_model(std::istream& in) {
  check_stream_header(in, "linear");
  expect_token(in, "dims", "linear model");
  const int k = static_cast<int>(read_int_token(in, "linear dims"));
  const int f = static_cast<int>(read_int_token(in, "linear dims"));
  if (k < 1 || f < 1) throw ParseError("bad linear model dims");
  LinearModel model;
  expect_token(in, "lambda", "linear model");
  model.lambda = read_double_token(in, "linear lambda");
  expect_token(in, "bias", "linear model");
  model.bias.resize(k);
  for (double& v : model.bias) v = read_double_token(in, "linear bias");
  model.weights.assign(k, std::vector<double>(f, 0.0));
  for (int c = 0; c < k; ++c) {
    expect_token(in, "w", "linear model");
    for (int j = 0; j < f; ++j) model.weights[c][j] = read_double_token(in, "linear weights");
  }
  expect_token(in, "end", "linear model");
  expect_token(in, "linear", "linear model");
  return model;
}

void write_gbm_model(std::ostream& out, const GbmModel& model) {
  out << "gbm 1\n";
  out << "dims " << model.num_classes << " " << model.num_rounds() << " " << model.max_depth
      << "\n";
  out << "learning_rate " << format_double(model.learning_rate) << "\n";
  out << "init";
  for (double v : model.init_scores) out << " " << format_double(v);
  out << "\n";
  for (int r = 0; r < model.num_rounds(); ++r) {
    for (int c = 0; c < model.num_classes; ++c) {
      const RegressionTree& tree = model.trees[r][c];
      out << "tree " << r << " " << c << " " << tree.nodes.size() << "\n";
      for (const TreeNode& node : tree.nodes) {
        out << "node " << (node.leaf ? 1 : 0) << " " << node.feature << " "
            << format_double(node.threshold) << " " << node.left << " " << node.right << " "
            << format_double(node.value) << "\n";
      }
    }
  }
  out << "end gbm\n";
}

GbmModel read_gbm_model(std::istream& in) {
  check_stream_header(in, "gbm");
  expect_token(in, "dims", "gbm model");
  GbmModel model;
  model.num_classes = static_cast<int>(read_int_token(in, "gbm dims"));
  const int rounds = static_cast<int>(read_int_token(in, "gbm dims"));
  model.max_depth = static_cast<int>(read_int_token(in, "gbm dims"));
  if (model.num_classes < 1 || rounds < 0) throw ParseError("bad gbm model dims");
  expect_token(in, "learning_rate", "gbm model");
  model.learning_rate = read_double_token(in, "gbm learning_rate");
  expect_token(in, "init", "gbm model");
  model.init_scores.resize(model.num_classes);
  for (double& v : model.init_scores) v = read_double_token(in, "gbm init scores");
  model.trees.assign(rounds, std::vector<RegressionTree>(model.num_classes));
  for (int r = 0; r < rounds; ++r) {
    for (int c = 0; c < model.num_classes; ++c) {
      expect_token(in, "tree", "gbm model");
      if (read_int_token(in, "gbm tree") != r || read_int_token(in, "gbm tree") != c)
        throw ParseError("gbm tree out of order");
      const long long count = read_int_token(in, "gbm tree node count");
      if (count < 1) throw ParseError("gbm tree must have nodes");
      RegressionTree& tree = model.trees[r][c];
      tree.nodes.resize(static_cast<std::size_t>(count));
      for (TreeNode& node : tree.nodes) {
        expect_token(in, "node", "gbm model");
        node.leaf = read_int_token(in, "gbm node") != 0;
        node.feature = static_cast<int>(read_int_token(in, "gbm node"));
        node.threshold = read_double_token(in, "gbm node");
        node.left = static_cast<int>(read_int_token(in, "gbm node"));
        node.right = static_cast<int>(read_int_token(in, "gbm node"));
        node.value = read_double_token(in, "gbm node");
        if (!node.leaf && (node.left < 0 || node.right < 0 ||
                           node.left >= count || node.right >= count))
          throw ParseError("gbm node child index out of range");
      }
    }
  }
  expect_token(in, "end", "gbm model");
  expect_token(in, "gbm", "gbm model");
  return model;
}

void write_svm_model(std::ostream& out, const SvmModel& model) {
  out << "svm 1\n";
  out << "features " << model.weights.size() << "\n";
  out << "c " << format_double(model.c) << "\n";
  out << "bias " << format_double(model.bias) << "\n";
  out << "w";
  for (double v : model.weights) out << " " << format_double(v);
  out << "\nend svm\n";
}

SvmModel read_svm_model(std::istream& in) {
  check_stream_header(in, "svm");
  expect_token(in, "features", "svm model");
  const long long f = read_int_token(in, "svm features");
  if (f < 1) throw ParseError("bad svm feature count");
  SvmModel model;
  expect_token(in, "c", "svm model");
  model.c = read_double_token(in, "svm c");
  expect_token(in, "bias", "svm model");
  model.bias = read_double_token(in, "svm bias");
  expect_token(in, "w", "svm model");
  model.weights.resize(static_cast<std::size_t>(f));
  for (double& v : model.weights) v = read_double_token(in, "svm weights");
  expect_token(in, "end", "svm model");
  expect_token(in, "svm", "svm model");
  return model;
}

void save_model(const LinearModel& model, const std::string& path) {
  save_with_magic(path, [&](std::ostream& out) { write_linear_model(out, model); });
}

void save_model(const GbmModel& model, const std::string& path) {
  save_with_magic(path, [&](std::ostream& out) { write_gbm_model(out, model); });
}

void save_model(const SvmModel& model, const std::string& path) {
  save_with_magic(path, [&](std::ostream& out) { write_svm_model(out, model); });
}

LinearModel load_linear_model(const std::string& path) {
  std::ifstream in = open_with_magic(path);
  return read_linear_model(in);
}

GbmModel load_gbm_model(const std::string& path) {
  std::ifstream in = open_with_magic(path);
  return read_gbm_model(in);
}

SvmModel load_svm_model(const std::string& path) {
  std::ifstream in = open_with_magic(path);
  return read_svm_model(in);
}

}  // namespace ml
}  // namespace histo
