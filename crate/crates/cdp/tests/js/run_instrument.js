// Runs the page script against a stub document built from a JSON tree.
// stdin: {tree, initial, props, mode, arg}; stdout: {result, before, after}.
"use strict";
const fs = require("fs");

const input = JSON.parse(fs.readFileSync(0, "utf8"));
const source = fs.readFileSync(process.argv[2], "utf8");

function build(spec, parent) {
  const el = {
    tagName: spec.tag.toUpperCase(),
    spec: spec,
    parentElement: parent,
    children: [],
    hasAttribute(name) { return Object.prototype.hasOwnProperty.call(spec.attrs || {}, name); },
    getAttribute(name) { return (spec.attrs || {})[name]; },
    getBoundingClientRect() {
      if (spec.throws) throw new Error("detached");
      const b = spec.box;
      return { x: b.x, y: b.y, width: b.w, height: b.h };
    },
    scrollIntoView() { scrolled.push(spec.tag); },
  };
  el.children = (spec.children || []).map((c) => build(c, el));
  el.children.forEach((c, i) => { c.nextElementSibling = el.children[i + 1] || null; });
  el.firstElementChild = el.children[0] || null;
  Object.defineProperty(el, "outerHTML", {
    get() { return "<" + spec.tag + ">" + el.children.map((c) => c.outerHTML).join("") + "</" + spec.tag + ">"; },
  });
  return el;
}

const scrolled = [];
global.document = { documentElement: build(input.tree, null) };
global.window = {
  getComputedStyle(el) {
    if (el.spec.throws) throw new Error("no style");
    return {
      getPropertyValue(p) {
        const own = el.spec.styles || {};
        if (p in own) return own[p];
        return p in input.initial ? input.initial[p] : "";
      },
    };
  },
};

const before = JSON.stringify(input.tree);
const fn = eval(source);
let result = fn(input.props, input.mode, input.arg);
if (input.mode === "nodes") result = result.map((n) => n.tagName.toLowerCase());
const after = JSON.stringify(input.tree);
process.stdout.write(JSON.stringify({ result, before, after, scrolled }));
