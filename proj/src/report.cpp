#include "meftlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace meftlab {
namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double number(const std::string& cell, const std::string& where, const char* column) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw std::runtime_error("malformed CSV at " + where + ": column " + column + " is not a number ('" +
                             cell + "')");
  }
  return v;
}

std::string base_name(const std::string& method) { return method.substr(0, method.find('_')); }

int rf_of(const std::string& method) {
  const auto pos = method.find("_rf");
  return pos == std::string::npos ? 0 : std::stoi(method.substr(pos + 3));
}

std::string cite(const CsvRow& r, const char* what, double v) {
  return r.method + " (" + r.source + ", " + what + "=" + fmt("%.0f", v) + ")";
}

}  // namespace

std::string csv_row(const TrainReport& r, bool deterministic) {
  std::string s = r.method;
  s += "," + fmt("%.4f", r.trainable_ratio_pct);
  s += "," + std::to_string(r.peak_retained_bytes);
  s += "," + std::to_string(r.est_footprint_bytes);
  s += "," + fmt("%.0f", r.backward_flops);
  s += "," + fmt("%.3f", deterministic ? 0.0 : r.step_ms);
  s += "," + fmt("%.2f", r.accuracy_pct);
  s += "," + fmt("%g", r.lr);
  return s;
}

std::string report_json(const TrainReport& r, bool deterministic) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["trainable_ratio_pct"] = r.trainable_ratio_pct;
  j["trainable_params"] = r.trainable_params;
  j["total_params"] = r.total_params;
  j["peak_retained_bytes"] = r.peak_retained_bytes;
  j["est_footprint_bytes"] = r.est_footprint_bytes;
  j["backward_flops"] = r.backward_flops;
  j["step_ms"] = r.step_ms;
  j["accuracy_pct"] = r.accuracy_pct;
  j["lr"] = r.lr;
  j["deterministic"] = deterministic;
  j["backbone_nodes_visited"] = r.backbone_nodes_visited;
  j["backbone_layers_visited"] = r.backbone_layers_visited;
  auto grid = nlohmann::ordered_json::array();
  for (const auto& g : r.grid) {
    grid.push_back({{"lr", g.lr}, {"accuracy_pct", g.accuracy_pct}, {"final_loss", g.final_loss}});
  }
  j["lr_grid"] = grid;
  return j.dump(2);
}

std::vector<CsvRow> parse_csv(const std::string& text, const std::string& source) {
  std::vector<CsvRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool has_status = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!header_seen) {
      if (line == kCsvHeader) {
        has_status = false;
      } else if (line == std::string(kCsvHeader) + ",status") {
        has_status = true;
      } else {
        throw std::runtime_error("malformed CSV at " + where + ": unexpected header");
      }
      header_seen = true;
      continue;
    }
    const auto cells = split(line);
    const std::size_t want = has_status ? 9 : 8;
    if (cells.size() != want) {
      throw std::runtime_error("malformed CSV at " + where + ": expected " + std::to_string(want) +
                               " columns, got " + std::to_string(cells.size()));
    }
    CsvRow r;
    r.source = where;
    r.method = cells[0];
    if (r.method.empty()) throw std::runtime_error("malformed CSV at " + where + ": empty method");
    r.status = has_status ? cells[8] : "ok";
    if (r.status == "ok") {
      r.trainable_ratio_pct = number(cells[1], where, "trainable_ratio_pct");
      r.peak_retained_bytes = number(cells[2], where, "peak_retained_bytes");
      r.est_footprint_bytes = number(cells[3], where, "est_footprint_bytes");
      r.backward_flops = number(cells[4], where, "backward_flops");
      r.step_ms = number(cells[5], where, "step_ms");
      r.accuracy_pct = number(cells[6], where, "accuracy_pct");
      r.lr = number(cells[7], where, "lr");
    }
    rows.push_back(r);
  }
  if (!header_seen) throw std::runtime_error("malformed CSV at " + source + ":1: missing header");
  return rows;
}

Group group_of(const std::string& method) {
  const std::string b = base_name(method);
  if (b == "adapter" || b == "lora" || b == "adalora" || b == "bitfit") return Group::Peft;
  if (b == "lst" || b == "unipt" || b == "sherl") return Group::Meft;
  return Group::Baseline;
}

std::vector<Verdict> ordering_verdicts(const std::vector<CsvRow>& rows) {
  std::vector<const CsvRow*> meft, peft, lst, vanilla, others;
  const CsvRow* head = nullptr;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    const Group g = group_of(r.method);
    if (g == Group::Meft) meft.push_back(&r);
    if (g == Group::Peft) peft.push_back(&r);
    if (base_name(r.method) == "lst") lst.push_back(&r);
    if (r.method == "vanilla") vanilla.push_back(&r);
    if (r.method == "head") {
      head = &r;
    } else {
      others.push_back(&r);
    }
  }
  std::vector<Verdict> out;
  const auto less_all = [&](const char* name, const std::vector<const CsvRow*>& lo,
                            const std::vector<const CsvRow*>& hi) {
    Verdict v{name, "PASS", ""};
    if (lo.empty() || hi.empty()) {
      v.outcome = "SKIP";
      v.detail = "rows missing";
    }
    for (const CsvRow* a : lo) {
      for (const CsvRow* b : hi) {
        if (v.outcome == "PASS" && !(a->peak_retained_bytes < b->peak_retained_bytes)) {
          v.outcome = "FAIL";
          v.detail = cite(*a, "peak", a->peak_retained_bytes) + " >= " + cite(*b, "peak", b->peak_retained_bytes);
        }
      }
    }
    out.push_back(v);
  };
  less_all("meft_below_peft_memory", meft, peft);
  less_all("peft_below_vanilla_memory", peft, vanilla);

  Verdict mono{"lst_memory_decreasing_in_rf", "PASS", ""};
  std::sort(lst.begin(), lst.end(), [](const CsvRow* a, const CsvRow* b) { return rf_of(a->method) < rf_of(b->method); });
  if (lst.size() < 2) {
    mono.outcome = "SKIP";
    mono.detail = "fewer than two lst rows";
  }
  for (std::size_t i = 1; i < lst.size() && mono.outcome == "PASS"; ++i) {
    if (!(lst[i]->peak_retained_bytes < lst[i - 1]->peak_retained_bytes)) {
      mono.outcome = "FAIL";
      mono.detail = cite(*lst[i], "peak", lst[i]->peak_retained_bytes) + " >= " +
                    cite(*lst[i - 1], "peak", lst[i - 1]->peak_retained_bytes);
    }
  }
  out.push_back(mono);

  Verdict acc{"head_tuning_lowest_accuracy", "PASS", ""};
  if (!head || others.empty()) {
    acc.outcome = "SKIP";
    acc.detail = "rows missing";
  } else {
    for (const CsvRow* r : others) {
      if (acc.outcome == "PASS" && !(head->accuracy_pct < r->accuracy_pct)) {
        acc.outcome = "FAIL";
        acc.detail = head->method + " (" + head->source + ", acc=" + fmt("%.2f", head->accuracy_pct) +
                     ") >= " + r->method + " (" + r->source + ", acc=" + fmt("%.2f", r->accuracy_pct) + ")";
      }
    }
  }
  out.push_back(acc);
  return out;
}

std::string render_report(const std::vector<CsvRow>& rows) {
  std::ostringstream md;
  md << "| method | trainable % | peak retained (B) | est. footprint (B) | backward FLOPs | step ms | accuracy % | lr |\n";
  md << "|---|---:|---:|---:|---:|---:|---:|---|\n";
  for (Group g : {Group::Baseline, Group::Peft, Group::Meft}) {
    std::vector<const CsvRow*> block;
    for (const auto& r : rows)
      if (group_of(r.method) == g) block.push_back(&r);
    if (block.empty()) continue;
    const char* title = g == Group::Baseline ? "baselines" : (g == Group::Peft ? "PEFT" : "MEFT");
    md << "| **" << title << "** | | | | | | | |\n";
    for (const CsvRow* r : block) {
      if (r->status != "ok") {
        md << "| " << r->method << " | " << r->status << " | | | | | | |\n";
        continue;
      }
      md << "| " << r->method << " | " << fmt("%.2f", r->trainable_ratio_pct) << " | "
         << fmt("%.0f", r->peak_retained_bytes) << " | " << fmt("%.0f", r->est_footprint_bytes) << " | "
         << fmt("%.3g", r->backward_flops) << " | " << fmt("%.2f", r->step_ms) << " | "
         << fmt("%.2f", r->accuracy_pct) << " | " << fmt("%g", r->lr) << " |\n";
    }
  }
  md << "\n";
  for (const auto& v : ordering_verdicts(rows)) {
    md << v.outcome << " " << v.name;
    if (!v.detail.empty()) md << ": " << v.detail;
    md << "\n";
  }
  return md.str();
}

}  // namespace meftlab
