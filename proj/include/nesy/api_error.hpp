#pragma once

#include <exception>

#include <json.hpp>

namespace nesy {

// HTTP status an exception maps to: 400 bad input, 404 unknown ids, 409
// state conflicts, 422 non-finite training, 500 otherwise.
int http_status(const std::exception& e);
// {status, code, message, span?, expected?, diagnostics?}
nlohmann::json api_error(const std::exception& e);

}  // namespace nesy
