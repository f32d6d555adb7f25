#include "pycat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pycat/error.hpp"

namespace pycat {

namespace {

void require_same(int64_t a, int64_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + " count mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

double mean_distance_mm(const Points3& pred, const Points3& gt, const char* what) {
  require_same(pred.rows(), gt.rows(), what);
  if (pred.rows() == 0) throw ContractError(std::string("no ") + what + "s to compare");
  return 1000.0 * (pred - gt).rowwise().norm().mean();
}

}  // namespace

double mpjpe(const Points3& pred, const Points3& gt) { return mean_distance_mm(pred, gt, "joint"); }

double pve(const Points3& pred, const Points3& gt) { return mean_distance_mm(pred, gt, "vertex"); }

double sum_squared_error(const Points3& a, const Points3& b) {
  require_same(a.rows(), b.rows(), "point");
  return (a - b).squaredNorm();
}

Points3 Similarity::apply(const Points3& p) const {
  return ((scale * p * rotation.transpose()).rowwise() + translation.transpose()).eval();
}

Similarity procrustes_align(const Points3& pred, const Points3& gt) {
  require_same(pred.rows(), gt.rows(), "point");
  if (pred.rows() < 3) throw ContractError("procrustes alignment needs at least 3 points");
  const Eigen::RowVector3d mx = pred.colwise().mean();
  const Eigen::RowVector3d my = gt.colwise().mean();
  const Points3 x = pred.rowwise() - mx;
  const Points3 y = gt.rowwise() - my;
  auto collinear = [](const Points3& p) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p);
    const auto s = svd.singularValues();
    return !(s(1) > 1e-9 * s(0)) || s(0) == 0.0;
  };
  if (collinear(x) || collinear(y)) throw ContractError("degenerate point configuration for procrustes alignment");
  const Eigen::Matrix3d cov = y.transpose() * x;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  s.scale = svd.singularValues().dot(d) / x.squaredNorm();
  s.translation = my.transpose() - s.scale * s.rotation * mx.transpose();
  return s;
}

double pa_mpjpe(const Points3& pred, const Points3& gt) {
  return mpjpe(procrustes_align(pred, gt).apply(pred), gt);
}

double oks(const Points2& pred, const Points2& gt, const std::vector<uint8_t>& visible, double area,
           const std::vector<double>& sigmas) {
  const int64_t K = gt.rows();
  require_same(pred.rows(), K, "keypoint");
  require_same(static_cast<int64_t>(visible.size()), K, "visibility flag");
  require_same(static_cast<int64_t>(sigmas.size()), K, "sigma");
  if (!(area > 0.0)) throw ContractError("OKS needs a positive area");
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t k = 0; k < K; ++k) {
    if (!visible[k]) continue;
    const double d2 = (pred.row(k) - gt.row(k)).squaredNorm();
    const double var = 2.0 * area * (2.0 * sigmas[k]) * (2.0 * sigmas[k]);
    sum += std::exp(-d2 / var);
    ++n;
  }
  if (n == 0) throw ContractError("OKS needs at least one visible keypoint");
  return sum / static_cast<double>(n);
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

double lookup(const std::vector<double>& thresholds, const std::vector<double>& values, double threshold) {
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (std::abs(thresholds[i] - threshold) < 1e-9) return values[i];
  throw ContractError("threshold " + std::to_string(threshold) + " was not evaluated");
}

struct ScoredMatch {
  double score;
  bool tp;
};

}  // namespace

double ApArResult::ap_at(double threshold) const { return lookup(thresholds, ap, threshold); }
double ApArResult::ar_at(double threshold) const { return lookup(thresholds, ar, threshold); }

ApArResult ap_ar(const std::vector<ImageKeypoints>& images, const std::vector<double>& thresholds,
                 const std::vector<double>& sigmas) {
  int64_t total_truths = 0;
  for (const auto& im : images) total_truths += static_cast<int64_t>(im.truths.size());
  if (total_truths == 0) throw ContractError("AP is undefined without ground truths");
  if (thresholds.empty()) throw ContractError("AP needs at least one threshold");

  // OKS tables and score order per image are threshold independent.
  std::vector<std::vector<std::vector<double>>> table(images.size());
  std::vector<std::vector<std::size_t>> order(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    auto& o = order[i];
    o.resize(im.detections.size());
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(),
                     [&](std::size_t a, std::size_t b) { return im.detections[a].score > im.detections[b].score; });
    table[i].assign(im.detections.size(), std::vector<double>(im.truths.size()));
    for (std::size_t d = 0; d < im.detections.size(); ++d)
      for (std::size_t g = 0; g < im.truths.size(); ++g) {
        const auto& t = im.truths[g];
        table[i][d][g] = oks(im.detections[d].keypoints, t.keypoints, t.visible, t.area, sigmas);
      }
  }

  ApArResult r;
  r.thresholds = thresholds;
  for (double thr : thresholds) {
    std::vector<ScoredMatch> all;
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::vector<uint8_t> taken(images[i].truths.size(), 0);
      for (std::size_t d : order[i]) {
        int best = -1;
        double best_oks = thr;
        for (std::size_t g = 0; g < taken.size(); ++g) {
          if (taken[g] || table[i][d][g] < best_oks) continue;
          if (best < 0 || table[i][d][g] > best_oks) {
            best = static_cast<int>(g);
            best_oks = table[i][d][g];
          }
        }
        if (best >= 0) taken[best] = 1;
        all.push_back({images[i].detections[d].score, best >= 0});
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
    std::vector<double> precision(all.size()), recall(all.size());
    double tp = 0.0;
    for (std::size_t k = 0; k < all.size(); ++k) {
      tp += all[k].tp;
      precision[k] = tp / static_cast<double>(k + 1);
      recall[k] = tp / static_cast<double>(total_truths);
    }
    for (std::size_t k = all.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0;
    for (int q = 0; q <= 100; ++q) {
      const double rq = q / 100.0;
      auto it = std::lower_bound(recall.begin(), recall.end(), rq);
      if (it != recall.end()) ap += precision[it - recall.begin()];
    }
    r.ap.push_back(ap / 101.0);
    r.ar.push_back(all.empty() ? 0.0 : recall.back());
  }
  r.ap_mean = std::accumulate(r.ap.begin(), r.ap.end(), 0.0) / static_cast<double>(r.ap.size());
  r.ar_mean = std::accumulate(r.ar.begin(), r.ar.end(), 0.0) / static_cast<double>(r.ar.size());
  return r;
}

double percent_improvement(double value, double baseline) {
  if (baseline == 0.0) throw ContractError("percent improvement needs a nonzero baseline");
  return (value - baseline) / baseline * 100.0;
}

Metrics2d summarize_2d(const ApArResult& r) {
  return {r.ap_mean, r.ap_at(0.5), r.ap_at(0.75), r.ar_mean, r.ar_at(0.5), r.ar_at(0.75)};
}

std::vector<MetricsReport> order_reports(std::vector<MetricsReport> reports) {
  static const std::vector<std::string> canonical = {"Baseline", "CA", "CA_Transformer", "CA_FPN_Transformer",
                                                     "PyCAT4"};
  auto rank = [&](const MetricsReport& r) {
    auto it = std::find(canonical.begin(), canonical.end(), r.model);
    return static_cast<std::size_t>(it - canonical.begin());
  };
  std::stable_sort(reports.begin(), reports.end(),
                   [&](const MetricsReport& a, const MetricsReport& b) { return rank(a) < rank(b); });
  return reports;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.2f%%", v);
  return buf;
}

std::string render(const std::vector<std::vector<std::string>>& rows, ReportFormat fmt) {
  std::string out;
  if (fmt == ReportFormat::csv) {
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
      out += '\n';
    }
    return out;
  }
  std::vector<std::size_t> width;
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const std::string& cell = rows[r][c];
      if (c) line += "  ";
      if (c == 0) line += cell + std::string(width[c] - cell.size(), ' ');
      else line += std::string(width[c] - cell.size(), ' ') + cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    }
  }
  return out;
}

}  // namespace

std::string format_table_3d(const std::vector<MetricsReport>& reports, ReportFormat fmt) {
  std::vector<MetricsReport> rs;
  for (const auto& r : order_reports(reports))
    if (r.m3d) rs.push_back(r);
  if (rs.empty()) return {};
  const bool improv = rs.size() > 1;
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Model", "PVE", "MPJPE", "Recon. Error"});
  if (improv) rows[0].push_back("PVE Improv. (%)");
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const Metrics3d& m = *rs[i].m3d;
    std::vector<std::string> row = {rs[i].model, fixed(m.pve, 2), fixed(m.mpjpe, 2), fixed(m.pa_mpjpe, 2)};
    if (improv) row.push_back(i == 0 ? "-" : percent(percent_improvement(m.pve, rs[0].m3d->pve)));
    rows.push_back(std::move(row));
  }
  return render(rows, fmt);
}

std::string format_table_2d(const std::vector<MetricsReport>& reports, ReportFormat fmt) {
  std::vector<MetricsReport> rs;
  for (const auto& r : order_reports(reports))
    if (r.m2d) rs.push_back(r);
  if (rs.empty()) return {};
  auto values = [](const Metrics2d& m) { return std::vector<double>{m.ap, m.ap50, m.ap75, m.ar, m.ar50, m.ar75}; };
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Model", "AP@50:95", "AP@50", "AP@75", "AR@50:95", "AR@50", "AR@75"});
  for (const auto& r : rs) {
    std::vector<std::string> row = {r.model};
    for (double v : values(*r.m2d)) row.push_back(fixed(v, 3));
    rows.push_back(std::move(row));
  }
  if (rs.size() > 1) {
    std::vector<std::string> row = {"Improvement (%)"};
    const auto base = values(*rs.front().m2d);
    const auto last = values(*rs.back().m2d);
    for (std::size_t c = 0; c < base.size(); ++c) {
      row.push_back(base[c] == 0.0 ? "-" : percent(percent_improvement(last[c], base[c])));
    }
    rows.push_back(std::move(row));
  }
  return render(rows, fmt);
}

std::string format_report(const std::vector<MetricsReport>& reports, ReportFormat fmt) {
  const std::string a = format_table_3d(reports, fmt);
  const std::string b = format_table_2d(reports, fmt);
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + "\n" + b;
}

}  // namespace pycat
