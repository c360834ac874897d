// Progressive enhancement for hdb pages. Every page works without this file;
// it only attaches to elements the server marks with data-hdb-enhance or
// data-hdb-required.
(function () {
  "use strict";

  function cellKey(row, i) {
    var cell = row.cells[i];
    var text = cell ? cell.textContent.trim() : "";
    var n = Number(text);
    return text !== "" && !isNaN(n) ? { num: true, v: n } : { num: false, v: text.toLowerCase() };
  }

  function compare(a, b) {
    if (a.num && b.num) return a.v - b.v;
    if (a.num !== b.num) return a.num ? -1 : 1;
    return a.v < b.v ? -1 : a.v > b.v ? 1 : 0;
  }

  function enhanceTable(table) {
    var head = table.tHead && table.tHead.rows[0];
    var body = table.tBodies[0];
    if (!head || !body) return;
    var state = { col: -1, dir: 1 };
    Array.prototype.forEach.call(head.cells, function (th, i) {
      th.addEventListener("click", function () {
        state.dir = state.col === i ? -state.dir : 1;
        state.col = i;
        var rows = Array.prototype.slice.call(body.rows).map(function (r, pos) {
          return { r: r, k: cellKey(r, i), pos: pos };
        });
        rows.sort(function (x, y) {
          return compare(x.k, y.k) * state.dir || x.pos - y.pos;
        });
        rows.forEach(function (x) { body.appendChild(x.r); });
      });
    });
    var box = document.createElement("input");
    box.type = "search";
    box.placeholder = "filter rows";
    box.addEventListener("input", function () {
      var q = box.value.toLowerCase();
      Array.prototype.forEach.call(body.rows, function (r) {
        r.hidden = q !== "" && r.textContent.toLowerCase().indexOf(q) < 0;
      });
    });
    table.parentNode.insertBefore(box, table);
  }

  function enhanceDelete(form) {
    form.addEventListener("submit", function (ev) {
      if (!window.confirm("Delete the matching rows?")) ev.preventDefault();
    });
  }

  function enhanceInput(form) {
    form.addEventListener("submit", function (ev) {
      var missing = [];
      form.querySelectorAll("[data-hdb-required]").forEach(function (el) {
        var empty = !el.disabled && el.type !== "file" && String(el.value).trim() === "";
        el.classList.toggle("hdb-invalid", empty);
        if (empty) missing.push(el.name || el.id);
      });
      var note = form.querySelector(".hdb-missing");
      if (missing.length) {
        ev.preventDefault();
        if (!note) {
          note = document.createElement("p");
          note.className = "hdb-missing error";
          form.insertBefore(note, form.firstChild);
        }
        note.textContent = "Required: " + missing.join(", ");
      } else if (note) {
        note.remove();
      }
    });
  }

  function enhanceUpload(form) {
    form.addEventListener("submit", function (ev) {
      if (ev.defaultPrevented || !window.XMLHttpRequest || !window.FormData) return;
      ev.preventDefault();
      var bar = document.createElement("progress");
      bar.className = "hdb-progress";
      bar.max = 1;
      bar.value = 0;
      form.appendChild(bar);
      var xhr = new XMLHttpRequest();
      xhr.open("POST", form.action);
      xhr.upload.addEventListener("progress", function (e) {
        if (e.lengthComputable) bar.value = Math.max(bar.value, e.loaded / e.total);
      });
      xhr.addEventListener("load", function () {
        document.open();
        document.write(xhr.responseText);
        document.close();
      });
      xhr.addEventListener("error", function () {
        bar.remove();
        var msg = document.createElement("p");
        msg.className = "error";
        msg.textContent = "Upload failed. Submit the form again to retry.";
        form.appendChild(msg);
      });
      xhr.send(new FormData(form));
    });
  }

  var handlers = {
    "result-table": enhanceTable,
    "delete-form": enhanceDelete,
    "input-form": enhanceInput,
    "upload-form": enhanceUpload
  };

  document.querySelectorAll("[data-hdb-enhance]").forEach(function (el) {
    el.getAttribute("data-hdb-enhance").split(/\s+/).forEach(function (kind) {
      if (handlers[kind]) handlers[kind](el);
    });
  });
})();
