// Copyright 2026 The kenli Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Renders analysis records (as written by `kenli analyze`) into Markdown
// tables, CSV plot data and static SVG effect plots.

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace kenli::cli {

inline std::string Fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string FmtP(double p) {
  if (p < 1e-4) return "<0.0001";
  return Fmt(p, 4);
}

inline std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string EffectsCsv(const nlohmann::json& effects) {
  std::ostringstream out;
  out << "factor,level,probability,lower,upper\n";
  for (const auto& l : effects.at("levels")) {
    out << effects.at("factor").get<std::string>() << ',' << l.at("level").get<std::string>() << ','
        << Fmt(l.at("probability").get<double>(), 6) << ',' << Fmt(l.at("lower").get<double>(), 6) << ','
        << Fmt(l.at("upper").get<double>(), 6) << '\n';
  }
  return out.str();
}

// Point estimate with a 95% interval per level, probability on the y axis.
inline std::string EffectsSvg(const nlohmann::json& effects, const std::string& title) {
  const auto& levels = effects.at("levels");
  const int n = static_cast<int>(levels.size());
  const int left = 60, top = 40, step = 80, plot_h = 260;
  const int width = left + step * std::max(n, 1) + 20, height = top + plot_h + 90;
  auto y_of = [&](double p) { return top + plot_h * (1.0 - p); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << XmlEscape(title) << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double p = t / 4.0;
    const double y = y_of(p);
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << width - 20 << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << Fmt(p, 2) << "</text>\n";
  }
  for (int i = 0; i < n; ++i) {
    const auto& l = levels[static_cast<size_t>(i)];
    const double x = left + step * (i + 0.5);
    s << "<line x1=\"" << x << "\" y1=\"" << y_of(l.at("lower").get<double>()) << "\" x2=\"" << x << "\" y2=\""
      << y_of(l.at("upper").get<double>()) << "\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
    s << "<circle cx=\"" << x << "\" cy=\"" << y_of(l.at("probability").get<double>())
      << "\" r=\"4\" fill=\"steelblue\"/>\n";
    s << "<text x=\"" << x << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"end\" transform=\"rotate(-35 " << x
      << ' ' << top + plot_h + 16 << ")\">" << XmlEscape(l.at("level").get<std::string>()) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline std::string TukeyMatrix(const nlohmann::json& tukey) {
  std::vector<std::string> names;
  std::map<std::pair<std::string, std::string>, double> p;
  auto add_name = [&](const std::string& x) {
    if (std::find(names.begin(), names.end(), x) == names.end()) names.push_back(x);
  };
  for (const auto& c : tukey.at("contrasts")) {
    const auto a = c.at("a").get<std::string>(), b = c.at("b").get<std::string>();
    add_name(a);
    add_name(b);
    p[{a, b}] = p[{b, a}] = c.at("p_adjusted").get<double>();
  }
  std::ostringstream out;
  out << "| |";
  for (const auto& n : names) out << ' ' << n << " |";
  out << "\n|---|";
  for (size_t i = 0; i < names.size(); ++i) out << "---|";
  out << '\n';
  for (size_t i = 0; i < names.size(); ++i) {
    out << "| " << names[i] << " |";
    for (size_t j = 0; j < names.size(); ++j) {
      if (j <= i) {
        out << " |";
      } else {
        const double v = p.at({names[i], names[j]});
        out << ' ' << FmtP(v) << (v < 0.05 ? "*" : "") << " |";
      }
    }
    out << '\n';
  }
  return out.str();
}

inline std::string RenderMarkdown(const std::vector<nlohmann::json>& analyses) {
  std::ostringstream out;
  out << "# Rating analysis\n\n";
  out << "Binomial mixed models with crossed worker and question intercepts; "
         "Tukey p-values adjusted over all model-type pairs (* marks p < 0.05).\n\n";
  for (const auto& a : analyses) {
    out << "## " << a.at("response").get<std::string>() << "\n\n";
    out << "Rows: " << a.at("rows").get<size_t>() << " (dropped no_need: " << a.at("dropped_no_need").get<size_t>()
        << "). sigma_worker = " << Fmt(a.at("sigma_worker").get<double>())
        << ", sigma_question = " << Fmt(a.at("sigma_question").get<double>())
        << ", log-likelihood = " << Fmt(a.at("loglik").get<double>(), 2) << ".\n\n";
    out << "| Main effect | chi2 | df | p |\n|---|---|---|---|\n";
    for (const auto& [factor, l] : a.at("lrt").items()) {
      out << "| " << factor << " | " << Fmt(l.at("chi2").get<double>(), 2) << " | " << l.at("df").get<int>() << " | "
          << FmtP(l.at("p").get<double>()) << " |\n";
    }
    out << "\n| Coefficient | estimate | SE |\n|---|---|---|\n";
    for (const auto& c : a.at("coefficients")) {
      out << "| " << c.at("name").get<std::string>() << " | " << Fmt(c.at("estimate").get<double>()) << " | "
          << Fmt(c.at("se").get<double>()) << " |\n";
    }
    out << "\nTukey adjusted p-values:\n\n" << TukeyMatrix(a.at("tukey")) << '\n';
  }
  return out.str();
}

}  // namespace kenli::cli
