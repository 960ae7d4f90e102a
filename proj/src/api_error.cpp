#include "nesy/api_error.hpp"

#include "nesy/error.hpp"

namespace nesy {

namespace {

using json = nlohmann::json;

json span_json(SourceSpan s) { return json::array({s.begin, s.end}); }

}  // namespace

int http_status(const std::exception& e) {
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const Conflict*>(&e)) return 409;
  if (dynamic_cast<const NumericError*>(&e)) return 422;
  if (dynamic_cast<const CorruptSession*>(&e)) return 500;
  if (dynamic_cast<const Error*>(&e)) return 400;
  if (dynamic_cast<const json::exception*>(&e)) return 400;
  return 500;
}

json api_error(const std::exception& e) {
  json j{{"status", http_status(e)}, {"message", e.what()}};
  if (const auto* err = dynamic_cast<const Error*>(&e)) j["code"] = err->code();
  else if (dynamic_cast<const json::exception*>(&e)) j["code"] = "bad_request";
  else j["code"] = "internal";
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
    j["span"] = span_json(p->span());
    j["expected"] = p->expected();
  }
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) {
    json diags = json::array();
    for (const auto& d : v->diagnostics()) diags.push_back({{"span", span_json(d.span)}, {"message", d.message}});
    j["diagnostics"] = diags;
    if (!v->diagnostics().empty()) j["span"] = span_json(v->diagnostics().front().span);
  }
  return j;
}

}  // namespace nesy
