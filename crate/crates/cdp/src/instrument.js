// Evaluated as `(<this function>)(requiredProps, mode, arg)`.
//
// Elements are numbered in document preorder starting at the root element.
// Modes:
//   "extract"  one record per element (returned by value)
//   "nodes"    the element array itself (returned by reference)
//   "locate"   scrolls element `arg` into view and returns its box, or null
//   "dom"      serialized markup of the document
(function (requiredProps, mode, arg) {
  "use strict";
  var nodes = [];
  var parents = [];
  var stack = [[document.documentElement, -1]];
  while (stack.length) {
    var top = stack.pop();
    var el = top[0];
    var index = nodes.length;
    nodes.push(el);
    parents.push(top[1]);
    var kids = [];
    for (var c = el.firstElementChild; c; c = c.nextElementSibling) kids.push(c);
    for (var k = kids.length - 1; k >= 0; k--) stack.push([kids[k], index]);
  }

  if (mode === "nodes") return nodes;
  if (mode === "dom") return document.documentElement.outerHTML;

  function box(e) {
    var r = e.getBoundingClientRect();
    return { x: r.x, y: r.y, w: r.width, h: r.height };
  }

  if (mode === "locate") {
    var target = nodes[arg];
    if (!target) return null;
    if (target.scrollIntoView) target.scrollIntoView({ block: "center", inline: "center" });
    return box(target);
  }

  var records = [];
  for (var i = 0; i < nodes.length; i++) {
    var node = nodes[i];
    var record = {
      index: i,
      parent: parents[i] < 0 ? null : parents[i],
      tag: node.tagName.toLowerCase(),
      attrs: {},
      box: { x: 0, y: 0, w: 0, h: 0 },
      styles: {}
    };
    if (node.hasAttribute("href")) record.attrs.href = node.getAttribute("href");
    if (node.hasAttribute("type")) record.attrs.type = node.getAttribute("type");
    try {
      record.box = box(node);
      var cs = window.getComputedStyle(node);
      for (var p = 0; p < requiredProps.length; p++) {
        record.styles[requiredProps[p]] = cs.getPropertyValue(requiredProps[p]);
      }
    } catch (err) {
      record.error = String(err);
    }
    records.push(record);
  }
  return { schema_version: 1, elements: records };
})
