#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "layoutsynth/layout.hpp"
#include "layoutsynth/networks.hpp"

namespace layoutsynth {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Request handlers over one immutable generator. Every method is a pure
// function of the model and its arguments and may be called concurrently.
class SynthesisService {
 public:
  SynthesisService(Generator<float> generator, CategorySet categories,
                   GeneratorOptions options = {});

  // Body: a layout document. 400 lists parse errors or validator
  // violations, 422 reports a lattice that differs from the model
  // resolution.
  HttpResponse synthesize(std::string_view body) const;
  HttpResponse categories() const;
  HttpResponse health() const;

  const NetworkConfig& config() const { return generator_.config(); }

 private:
  Generator<float> generator_;
  CategorySet categories_;
  GeneratorOptions options_;
};

// Minimal HTTP/1.1 front end: POST /synthesize, GET /categories,
// GET /health.
class HttpServer {
 public:
  explicit HttpServer(const SynthesisService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop() is called from another thread.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace layoutsynth
