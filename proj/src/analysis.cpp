#include "taca/analysis.hpp"

#include "taca/csv.hpp"

namespace taca {

std::vector<SuppressionRow> suppression_rows(const SuppressionReport& report) {
  std::vector<SuppressionRow> rows;
  const auto& lay = report.layout;
  for (Index h = 0; h < report.unified_mass.rows(); ++h) {
    rows.push_back({std::to_string(h), report.gamma, lay.n_txt, lay.n_vis,
                    report.unified_mass.row(h).mean(), report.head_ratio(h)});
  }
  if (report.unified_mass.rows() > 0) {
    rows.push_back({"all", report.gamma, lay.n_txt, lay.n_vis, report.unified_mass.mean(),
                    report.mean_ratio});
  }
  return rows;
}

void export_stats(const std::vector<SuppressionRow>& rows, const std::filesystem::path& path) {
  CsvWriter csv(path, {"head", "gamma", "n_txt", "n_vis", "mean_mass", "ratio"});
  for (const auto& r : rows) {
    csv.row({r.head, format_number(r.gamma), format_number(static_cast<long long>(r.n_txt)),
             format_number(static_cast<long long>(r.n_vis)), format_number(r.mean_mass),
             format_number(r.ratio)});
  }
  csv.close();
}

void export_stats(const AttentionMapDiff& diff, const std::filesystem::path& path) {
  CsvWriter csv(path, {"head", "query_bucket", "mean_diff", "max_diff"});
  for (Index h = 0; h < diff.bucket_mean.rows(); ++h) {
    for (Index b = 0; b < diff.bucket_mean.cols(); ++b) {
      csv.row({format_number(static_cast<long long>(h)), format_number(static_cast<long long>(b)),
               format_number(diff.bucket_mean(h, b)), format_number(diff.bucket_max(h, b))});
    }
  }
  csv.close();
}

std::vector<SuppressionRow> read_suppression_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const auto c_head = t.column("head"), c_gamma = t.column("gamma"), c_nt = t.column("n_txt"),
             c_nv = t.column("n_vis"), c_mass = t.column("mean_mass"), c_ratio = t.column("ratio");
  std::vector<SuppressionRow> rows;
  for (const auto& f : t.rows) {
    if (f.size() != t.header.size()) throw ShapeError("suppression CSV: ragged row");
    rows.push_back({f[c_head], parse_number(f[c_gamma]),
                    static_cast<Index>(parse_number(f[c_nt])),
                    static_cast<Index>(parse_number(f[c_nv])), parse_number(f[c_mass]),
                    parse_number(f[c_ratio])});
  }
  return rows;
}

}  // namespace taca
