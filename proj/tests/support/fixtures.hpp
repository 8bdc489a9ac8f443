#pragma once

// Small model specs over 48x48 inputs that train in milliseconds.

#include "fer/model.hpp"

namespace fer::oracle {

/// conv -> batchnorm -> relu -> three pools -> dropout -> dense.
inline ModelSpec tiny_spec() {
  using L = LayerDesc;
  ModelSpec s{"tiny", {1, 1, 48, 48}};
  s.layers = {L::conv(1, 2, 0.01), L::batchnorm(2), L::relu(), L::maxpool(), L::maxpool(),
              L::maxpool(),        L::flatten(),    L::dropout(0.5), L::dense(72, 7)};
  return s;
}

/// Multinomial logistic regression on raw pixels.
inline ModelSpec linear_spec() {
  ModelSpec s{"linear", {1, 1, 48, 48}};
  s.layers = {LayerDesc::flatten(), LayerDesc::dense(2304, 7)};
  return s;
}

}  // namespace fer::oracle
