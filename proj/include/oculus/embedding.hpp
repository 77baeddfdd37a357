// Embedding interface plus the deterministic feature-hashing embedder used
// for offline runs: tokens hashed into d buckets, L2-normalized.

#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "oculus/common.hpp"

namespace oculus {

class Embedder {
public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string id() const = 0;
};

class HashingEmbedder : public Embedder {
public:
  explicit HashingEmbedder(std::size_t dimension = 256) : dimension_(dimension) {
    if (dimension_ == 0) throw ValidationError("embedder dimension must be positive");
  }

  std::vector<double> embed(std::string_view text) const override {
    std::vector<double> v(dimension_, 0.0);
    std::string token;
    auto flush = [&] {
      if (!token.empty()) {
        v[fnv1a64(token) % dimension_] += 1.0;
        token.clear();
      }
    };
    for (unsigned char c : text) {
      if (std::isalnum(c)) {
        token.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  std::size_t dimension() const override { return dimension_; }

  std::string id() const override {
    return "hash" + std::to_string(dimension_);
  }

private:
  std::size_t dimension_;
};

inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ValidationError("embedding dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace oculus
