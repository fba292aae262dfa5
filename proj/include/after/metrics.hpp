#pragma once

#include <vector>

namespace after {

struct ConfusionCounts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};

ConfusionCounts confusion(const std::vector<int>& preds,
                          const std::vector<int>& golds,
                          int positive_class = 1);

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds);

// 2PR/(P+R); 0 when the denominator vanishes
double f1_binary(const std::vector<int>& preds, const std::vector<int>& golds,
                 int positive_class = 1);

// Matthews correlation over 0/1 labels; 0 when any marginal is empty
double matthews_corr(const std::vector<int>& preds,
                     const std::vector<int>& golds);

}  // namespace after
