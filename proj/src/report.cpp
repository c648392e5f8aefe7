#include "resablate/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "resablate/errors.hpp"

namespace resablate {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string notes_for(Protocol p) {
  switch (p) {
    case Protocol::e1: return "stem swept; head excluded";
    case Protocol::e2: return "first unit of each block kept; single-unit blocks are no-ops";
    case Protocol::e3: return "projection shortcuts of stages >= 1";
    case Protocol::custom: break;
  }
  return "";
}

ordered_json report_json(const TrivialityReport& r) {
  ordered_json j;
  j["fingerprint"] = r.fingerprint;
  j["task"] = std::string(to_string(r.task));
  j["metric"] = r.metric_name;
  j["baseline"] = r.baseline;
  j["tau"] = r.tau;
  ordered_json rows = ordered_json::array();
  for (const AblationResult& res : r.results) {
    ordered_json row;
    row["label"] = res.label;
    ordered_json addresses = ordered_json::array();
    for (const LayerAddress& a : res.spec.targets) addresses.push_back(a.str());
    row["addresses"] = std::move(addresses);
    row["ablated"] = res.ablated;
    row["delta"] = res.delta;
    row["trivial"] = res.trivial;
    rows.push_back(std::move(row));
  }
  j["results"] = std::move(rows);
  j["seed"] = r.seed;
  j["dataset"] = r.dataset.empty() ? ordered_json::object() : ordered_json::parse(r.dataset);
  j["notes"] = notes_for(r.protocol);
  return j;
}

template <typename T>
T field(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where + ": bad value for '" + key + "'");
  }
}

TrivialityReport report_from_json(Protocol protocol, const ordered_json& j) {
  const std::string where = "report " + std::string(to_string(protocol));
  TrivialityReport r;
  r.protocol = protocol;
  r.fingerprint = field<std::string>(j, "fingerprint", where);
  try {
    r.task = parse_task(field<std::string>(j, "task", where));
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  r.metric_name = field<std::string>(j, "metric", where);
  r.baseline = field<double>(j, "baseline", where);
  r.tau = field<double>(j, "tau", where);
  r.seed = field<std::uint64_t>(j, "seed", where);
  if (!j.contains("dataset") || !j["dataset"].is_object()) throw FormatError(where + ": missing 'dataset'");
  r.dataset = j["dataset"].empty() ? "" : j["dataset"].dump();
  if (!j.contains("results") || !j["results"].is_array()) throw FormatError(where + ": missing 'results'");
  for (const ordered_json& row : j["results"]) {
    AblationResult res;
    res.label = field<std::string>(row, "label", where);
    res.spec.protocol = protocol;
    for (const std::string& a : field<std::vector<std::string>>(row, "addresses", where)) {
      try {
        res.spec.targets.push_back(LayerAddress::parse(a));
      } catch (const ConfigError& e) {
        throw FormatError(where + ": " + e.what());
      }
    }
    res.metric_name = r.metric_name;
    res.baseline = r.baseline;
    res.ablated = field<double>(row, "ablated", where);
    res.delta = field<double>(row, "delta", where);
    res.trivial = field<bool>(row, "trivial", where);
    res.tau = r.tau;
    r.results.push_back(std::move(res));
  }
  return r;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string emit_reports(const ReportSet& reports) {
  ordered_json j = ordered_json::object();
  for (const auto& [protocol, report] : reports) j[std::string(to_string(protocol))] = report_json(report);
  return j.dump(2) + "\n";
}

ReportSet parse_reports(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.empty()) throw FormatError("report file holds no protocol reports");
  ReportSet out;
  for (const auto& [key, value] : j.items()) {
    Protocol p;
    try {
      p = parse_protocol(key);
    } catch (const ConfigError&) {
      throw FormatError("unknown protocol key '" + key + "' in report");
    }
    out[p] = report_from_json(p, value);
  }
  return out;
}

std::string reports_to_csv(const ReportSet& reports) {
  std::ostringstream os;
  os << "protocol,label,addresses,baseline,ablated,delta,trivial,tau\n";
  for (const auto& [protocol, r] : reports) {
    for (const AblationResult& res : r.results) {
      std::string addresses;
      for (const LayerAddress& a : res.spec.targets) addresses += (addresses.empty() ? "" : ";") + a.str();
      os << to_string(protocol) << ',' << res.label << ',' << addresses << ',' << fixed(r.baseline, 6) << ','
         << fixed(res.ablated, 6) << ',' << fixed(res.delta, 6) << ',' << (res.trivial ? "true" : "false")
         << ',' << r.tau << '\n';
    }
  }
  return os.str();
}

std::string reports_to_text(const ReportSet& reports) {
  std::ostringstream os;
  for (const auto& [protocol, r] : reports) {
    os << "protocol " << to_string(protocol) << "  task " << to_string(r.task) << "  " << r.metric_name
       << " baseline " << fixed(r.baseline) << "  tau " << r.tau << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-16s %9s %9s  %s\n", "target", "ablated", "delta", "verdict");
    os << line;
    for (const AblationResult& res : r.results) {
      std::snprintf(line, sizeof line, "  %-16s %9.4f %+9.4f  %s\n", res.label.c_str(), res.ablated, res.delta,
                    res.trivial ? "trivial" : "non-trivial");
      os << line;
    }
  }
  return os.str();
}

std::string reports_to_svg(const ReportSet& reports) {
  constexpr double bar = 28, gap = 8, left = 56, top = 36, plot_h = 200, label_h = 90, panel_gap = 40;
  double width = 0;
  for (const auto& [p, r] : reports) {
    width = std::max(width, left + 20 + static_cast<double>(r.results.size()) * (bar + gap));
  }
  width = std::max(width, 320.0);
  const double panel_h = top + plot_h + label_h;
  const double height = static_cast<double>(reports.size()) * (panel_h + panel_gap);

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  double y0 = 0;
  for (const auto& [protocol, r] : reports) {
    const double base_y = y0 + top + plot_h;
    auto y_of = [&](double v) { return base_y - std::clamp(v, 0.0, 1.0) * plot_h; };
    os << "  <g id=\"" << to_string(protocol) << "\">\n";
    os << "    <text x=\"" << left << "\" y=\"" << y0 + 20 << "\" font-size=\"13\">"
       << xml_escape(std::string(to_string(protocol)) + ": " + r.metric_name + " after zeroing") << "</text>\n";
    os << "    <line x1=\"" << left << "\" y1=\"" << y0 + top << "\" x2=\"" << left << "\" y2=\"" << base_y
       << "\" stroke=\"black\"/>\n";
    os << "    <line x1=\"" << left << "\" y1=\"" << base_y << "\" x2=\"" << width - 10 << "\" y2=\"" << base_y
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = t * 0.25;
      os << "    <text x=\"" << left - 6 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">" << fixed(v, 2)
         << "</text>\n";
    }
    double x = left + 10;
    for (const AblationResult& res : r.results) {
      const double y = y_of(res.ablated);
      os << "    <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\"" << base_y - y
         << "\" fill=\"" << (res.trivial ? "#9ecae1" : "#de2d26") << "\"><title>"
         << xml_escape(res.label + " " + fixed(res.ablated)) << "</title></rect>\n";
      const double lx = x + bar / 2, ly = base_y + 8;
      os << "    <text x=\"" << lx << "\" y=\"" << ly << "\" transform=\"rotate(60 " << lx << ' ' << ly
         << ")\">" << xml_escape(res.label) << "</text>\n";
      x += bar + gap;
    }
    os << "    <line x1=\"" << left << "\" y1=\"" << y_of(r.baseline) << "\" x2=\"" << width - 10 << "\" y2=\""
       << y_of(r.baseline) << "\" stroke=\"black\" stroke-dasharray=\"6 3\"/>\n";
    os << "    <text x=\"" << width - 12 << "\" y=\"" << y_of(r.baseline) - 4 << "\" text-anchor=\"end\">baseline "
       << fixed(r.baseline) << "</text>\n";
    os << "  </g>\n";
    y0 += panel_h + panel_gap;
  }
  os << "</svg>\n";
  return os.str();
}

std::size_t XmlNode::count(std::string_view element) const {
  std::size_t n = name == element ? 1 : 0;
  for (const XmlNode& c : children) n += c.count(element);
  return n;
}

namespace {

class XmlReader {
 public:
  explicit XmlReader(std::string_view s) : s_(s) {}

  XmlNode document() {
    skip_prolog();
    XmlNode root = element();
    skip_space();
    if (pos_ != s_.size()) fail("content after the root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("malformed XML at offset " + std::to_string(pos_) + ": " + what);
  }

  bool starts(std::string_view t) const { return s_.substr(pos_, t.size()) == t; }

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  void skip_prolog() {
    for (;;) {
      skip_space();
      if (starts("<?")) {
        const auto end = s_.find("?>", pos_);
        if (end == std::string_view::npos) fail("unterminated declaration");
        pos_ = end + 2;
      } else if (starts("<!--")) {
        comment();
      } else {
        return;
      }
    }
  }

  void comment() {
    const auto end = s_.find("-->", pos_);
    if (end == std::string_view::npos) fail("unterminated comment");
    pos_ = end + 3;
  }

  std::string name() {
    const std::size_t start = pos_;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == ':' || c == '.') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) fail("expected a name");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string decode(std::string_view raw) const {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '<') fail("'<' inside text or attribute");
      if (raw[i] != '&') {
        out += raw[i];
        continue;
      }
      const auto semi = raw.find(';', i);
      if (semi == std::string_view::npos) fail("unterminated entity");
      const std::string_view ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "lt") out += '<';
      else if (ent == "gt") out += '>';
      else if (ent == "amp") out += '&';
      else if (ent == "quot") out += '"';
      else if (ent == "apos") out += '\'';
      else fail("unknown entity &" + std::string(ent) + ";");
      i = semi;
    }
    return out;
  }

  XmlNode element() {
    if (!starts("<")) fail("expected '<'");
    ++pos_;
    XmlNode node;
    node.name = name();
    for (;;) {
      skip_space();
      if (starts("/>")) {
        pos_ += 2;
        return node;
      }
      if (starts(">")) {
        ++pos_;
        break;
      }
      const std::string key = name();
      skip_space();
      if (!starts("=")) fail("expected '=' after attribute " + key);
      ++pos_;
      skip_space();
      if (pos_ >= s_.size() || (s_[pos_] != '"' && s_[pos_] != '\'')) fail("unquoted attribute " + key);
      const char q = s_[pos_++];
      const auto end = s_.find(q, pos_);
      if (end == std::string_view::npos) fail("unterminated attribute " + key);
      if (node.attributes.count(key)) fail("duplicate attribute " + key);
      node.attributes[key] = decode(s_.substr(pos_, end - pos_));
      pos_ = end + 1;
    }
    for (;;) {
      if (pos_ >= s_.size()) fail("unclosed element <" + node.name + ">");
      if (starts("</")) {
        pos_ += 2;
        const std::string closing = name();
        if (closing != node.name) fail("</" + closing + "> closes <" + node.name + ">");
        skip_space();
        if (!starts(">")) fail("expected '>'");
        ++pos_;
        return node;
      }
      if (starts("<!--")) {
        comment();
      } else if (starts("<")) {
        node.children.push_back(element());
      } else {
        const auto next = s_.find('<', pos_);
        const std::size_t end = next == std::string_view::npos ? s_.size() : next;
        node.text += decode(s_.substr(pos_, end - pos_));
        pos_ = end;
      }
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

XmlNode parse_xml(std::string_view text) { return XmlReader(text).document(); }

const std::vector<ReferencePattern>& reference_patterns() {
  static const std::vector<ReferencePattern> patterns = {
      {"cifar10-e2", "Cifar-10, second experiment table", Protocol::e2, "accuracy", 0.84,
       {{"block1", 0.51}, {"block2", 0.61}, {"block3", 0.83}, {"block4", 0.84}}},
      {"cifar10-e3", "Cifar-10, third experiment table", Protocol::e3, "accuracy", 0.84,
       {{"block2", 0.28}, {"block3", 0.33}, {"block4", 0.16}}},
      {"t1-e2", "T1, second experiment table", Protocol::e2, "dice", 0.87,
       {{"block1", 0.82}, {"block2", 0.86}, {"block3", 0.82}, {"block4", 0.00}}},
      {"t1-e3", "T1, third experiment table", Protocol::e3, "dice", 0.87,
       {{"block2", 0.00}, {"block3", 0.00}, {"block4", 0.00}}},
  };
  return patterns;
}

const ReferencePattern& reference_pattern(std::string_view id) {
  for (const ReferencePattern& p : reference_patterns()) {
    if (p.id == id) return p;
  }
  std::string known;
  for (const ReferencePattern& p : reference_patterns()) known += (known.empty() ? "" : ", ") + p.id;
  throw ConfigError("unknown reference '" + std::string(id) + "' (known: " + known + ")");
}

std::size_t Comparison::matches() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const ComparisonRow& r) { return r.match; }));
}

Comparison compare_to_reference(const TrivialityReport& report, const ReferencePattern& reference) {
  Comparison c;
  c.reference_id = reference.id;
  c.tau = report.tau;
  c.desk_baseline = report.baseline;
  c.reference_baseline = reference.baseline;
  for (const ReferenceRow& row : reference.rows) {
    ComparisonRow out;
    out.label = row.label;
    out.reference_value = row.value;
    out.reference_trivial = classify_triviality(reference.baseline, row.value, report.tau) == Verdict::trivial;
    for (const AblationResult& res : report.results) {
      if (res.label == row.label) {
        out.desk_value = res.ablated;
        out.desk_trivial = res.trivial;
      }
    }
    out.match = out.desk_trivial && *out.desk_trivial == out.reference_trivial;
    c.rows.push_back(std::move(out));
  }
  return c;
}

std::string comparison_to_text(const Comparison& c) {
  std::ostringstream os;
  char line[200];
  os << "reference " << c.reference_id << "  tau " << c.tau << "\n";
  std::snprintf(line, sizeof line, "  %-8s %10s %-12s %10s %-12s %s\n", "position", "desk", "verdict", "reference",
                "verdict", "match");
  os << line;
  std::snprintf(line, sizeof line, "  %-8s %10.4f %-12s %10.4f %-12s\n", "baseline", c.desk_baseline, "",
                c.reference_baseline, "");
  os << line;
  for (const ComparisonRow& r : c.rows) {
    const std::string desk = r.desk_value ? fixed(*r.desk_value) : "n/a";
    const std::string desk_verdict = r.desk_trivial ? (*r.desk_trivial ? "trivial" : "non-trivial") : "n/a";
    std::snprintf(line, sizeof line, "  %-8s %10s %-12s %10.4f %-12s %s\n", r.label.c_str(), desk.c_str(),
                  desk_verdict.c_str(), r.reference_value, r.reference_trivial ? "trivial" : "non-trivial",
                  r.match ? "yes" : "no");
    os << line;
  }
  os << "qualitative match: " << c.matches() << "/" << c.rows.size() << " positions\n";
  return os.str();
}

std::string emit_history(const ResNetConfig& config, const Hyperparams& hyper, const DatasetDescriptor& dataset,
                         const std::vector<EpochRecord>& history) {
  ordered_json j;
  j["config"] = ordered_json::parse(config.to_text());
  ordered_json h;
  h["epochs"] = hyper.epochs;
  h["batch_size"] = hyper.batch_size;
  h["lr"] = hyper.lr;
  h["momentum"] = hyper.momentum;
  h["weight_decay"] = hyper.weight_decay;
  h["seed"] = hyper.seed;
  h["lr_schedule"] = hyper.lr_schedule == LrSchedule::step_decay ? "step_decay" : "constant";
  h["decay_epoch"] = hyper.decay_epoch;
  j["hyperparams"] = std::move(h);
  j["dataset"] = ordered_json::parse(dataset.to_text());
  ordered_json rows = ordered_json::array();
  for (const EpochRecord& e : history) {
    ordered_json row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["test_metric"] = e.test_metric;
    rows.push_back(std::move(row));
  }
  j["history"] = std::move(rows);
  j["final_metric"] = history.empty() ? 0.0 : history.back().test_metric;
  return j.dump(2) + "\n";
}

}  // namespace resablate
