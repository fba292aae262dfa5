#include "after/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace after {

namespace {

void check_pair(const std::vector<int>& preds, const std::vector<int>& golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("metrics: preds and golds differ in length");
  }
  if (preds.empty()) {
    throw std::invalid_argument("metrics: empty label lists");
  }
}

}  // namespace

ConfusionCounts confusion(const std::vector<int>& preds,
                          const std::vector<int>& golds, int positive_class) {
  check_pair(preds, golds);
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pp = preds[i] == positive_class;
    const bool gp = golds[i] == positive_class;
    if (pp && gp) {
      ++c.tp;
    } else if (pp && !gp) {
      ++c.fp;
    } else if (!pp && gp) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
  check_pair(preds, golds);
  long long hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == golds[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_binary(const std::vector<int>& preds, const std::vector<int>& golds,
                 int positive_class) {
  const ConfusionCounts c = confusion(preds, golds, positive_class);
  const double p_den = static_cast<double>(c.tp + c.fp);
  const double r_den = static_cast<double>(c.tp + c.fn);
  const double prec = p_den > 0 ? static_cast<double>(c.tp) / p_den : 0.0;
  const double rec = r_den > 0 ? static_cast<double>(c.tp) / r_den : 0.0;
  if (prec + rec == 0.0) return 0.0;
  return 2.0 * prec * rec / (prec + rec);
}

double matthews_corr(const std::vector<int>& preds,
                     const std::vector<int>& golds) {
  check_pair(preds, golds);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (golds[i] != 0 && golds[i] != 1)) {
      throw std::invalid_argument("matthews_corr: labels must be 0 or 1");
    }
  }
  const ConfusionCounts c = confusion(preds, golds, 1);
  const double tp = static_cast<double>(c.tp);
  const double tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  const double f1 = tp + fp;
  const double f2 = tp + fn;
  const double f3 = tn + fp;
  const double f4 = tn + fn;
  if (f1 == 0.0 || f2 == 0.0 || f3 == 0.0 || f4 == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(f1 * f2 * f3 * f4);
}

}  // namespace after
