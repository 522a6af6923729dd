#pragma once

// Everything except the HTTP client (grove/http_agent.hpp), which pulls in cpp-httplib.
#include <grove/agent.hpp>
#include <grove/case_model.hpp>
#include <grove/edit_script.hpp>
#include <grove/error.hpp>
#include <grove/persistence.hpp>
#include <grove/render.hpp>
#include <grove/synthetic.hpp>
#include <grove/training.hpp>
#include <grove/tree.hpp>
#include <grove/tree_store.hpp>
#include <grove/validation.hpp>
#include <grove/zoom.hpp>
