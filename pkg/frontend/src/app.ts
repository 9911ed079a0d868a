// DOM wiring for the operator console. Everything on this page is driven
// by the server-declared interface; no per-service knowledge lives here.

import { discover, fetchInterface, predict, ServerError } from "./api.js";
import {
  buildFormModel,
  canSubmit,
  FieldState,
  FormModel,
  toFormData,
  validateForm,
} from "./form.js";
import { decodeMha, decodeVolumePayload, Volume } from "./mha.js";
import { InterfaceDescription, ResponseField, ServiceRecord } from "./protocol.js";
import { Axis, composeOverlay, extractSlice, intensityRange, sliceCount, sliceShape } from "./slices.js";

const $ = (id: string) => document.getElementById(id)!;

let currentServerUrl: string | null = null;
let currentModel: FormModel | null = null;
let inputVolume: Volume | null = null; // decoded copy of the first uploaded volume
let inFlight = false;

// ---------------------------------------------------------------------------
// server selection

async function refreshServerList() {
  const registryUrl = ($("registry-url") as HTMLInputElement).value.trim();
  const listEl = $("server-list");
  listEl.textContent = "loading…";
  try {
    const services = await discover(registryUrl);
    renderServerList(services);
  } catch (err) {
    listEl.innerHTML = "";
    const div = document.createElement("div");
    div.className = "error";
    div.textContent = `registry unreachable: ${(err as Error).message}`;
    listEl.appendChild(div);
  }
}

function renderServerList(services: ServiceRecord[]) {
  const listEl = $("server-list");
  listEl.innerHTML = "";
  if (!services.length) {
    listEl.textContent = "no live services";
    return;
  }
  for (const svc of services) {
    const row = document.createElement("button");
    row.className = "server-row";
    row.textContent = `${svc.name} — ${svc.modality || "?"} / ${svc.anatomy || "?"} / ${svc.task || "?"}`;
    row.title = svc.service_id;
    row.onclick = () => {
      const base = svc.prediction_url.replace(/\/predict$/, "");
      selectServer(base);
    };
    listEl.appendChild(row);
  }
}

async function selectServer(serverUrl: string) {
  currentServerUrl = serverUrl;
  $("selected-server").textContent = serverUrl;
  $("form-pane").innerHTML = "loading interface…";
  $("result-pane").innerHTML = "";
  try {
    const desc = await fetchInterface(serverUrl);
    currentModel = buildFormModel(desc);
    inputVolume = null;
    renderForm(desc);
  } catch (err) {
    $("form-pane").innerHTML = "";
    showError($("form-pane"), `could not fetch interface: ${(err as Error).message}`);
  }
}

// ---------------------------------------------------------------------------
// dynamic form

function renderForm(desc: InterfaceDescription) {
  const pane = $("form-pane");
  pane.innerHTML = "";
  const title = document.createElement("h3");
  title.textContent = desc.name;
  pane.appendChild(title);

  for (const field of currentModel!.fields) {
    pane.appendChild(renderField(field));
  }

  const problems = document.createElement("div");
  problems.id = "form-problems";
  problems.className = "problems";
  pane.appendChild(problems);

  const progress = document.createElement("progress");
  progress.id = "upload-progress";
  progress.max = 1;
  progress.value = 0;
  progress.style.display = "none";
  pane.appendChild(progress);

  const submit = document.createElement("button");
  submit.id = "submit-btn";
  submit.textContent = "Process";
  submit.onclick = onSubmit;
  pane.appendChild(submit);

  syncSubmitState();
}

function renderField(field: FieldState): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "field";
  const label = document.createElement("label");
  label.textContent = field.element.label || field.element.name;
  if (field.element.required) label.textContent += " *";
  wrap.appendChild(label);

  if (!field.supported) {
    const note = document.createElement("span");
    note.className = "error";
    note.textContent = `unsupported element kind "${field.element.kind}"`;
    wrap.appendChild(note);
    return wrap;
  }

  const c = field.element.constraints;
  switch (field.element.kind) {
    case "volume": {
      const input = document.createElement("input");
      input.type = "file";
      input.accept = ".mha";
      input.onchange = async () => {
        const file = input.files?.[0] ?? null;
        field.value = file;
        if (file && !inputVolume) {
          try {
            inputVolume = decodeMha(new Uint8Array(await file.arrayBuffer()));
          } catch {
            inputVolume = null; // server will render its own opinion
          }
        }
        syncSubmitState();
      };
      wrap.appendChild(input);
      if (c.expected_modality) {
        const hint = document.createElement("small");
        hint.textContent = `expected modality: ${c.expected_modality}`;
        wrap.appendChild(hint);
      }
      break;
    }
    case "scalar_slider": {
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(c.minimum);
      input.max = String(c.maximum);
      input.step = String((c.maximum - c.minimum) / 200);
      input.value = String(field.value);
      const readout = document.createElement("span");
      readout.textContent = String(field.value);
      input.oninput = () => {
        field.value = Number(input.value);
        readout.textContent = input.value;
        syncSubmitState();
      };
      wrap.appendChild(input);
      wrap.appendChild(readout);
      break;
    }
    case "checkbox": {
      const input = document.createElement("input");
      input.type = "checkbox";
      input.checked = Boolean(field.value);
      input.onchange = () => {
        field.value = input.checked;
        syncSubmitState();
      };
      wrap.appendChild(input);
      break;
    }
    case "choice": {
      const select = document.createElement("select");
      for (const opt of c.options ?? []) {
        const o = document.createElement("option");
        o.value = opt;
        o.textContent = opt;
        if (opt === field.value) o.selected = true;
        select.appendChild(o);
      }
      select.onchange = () => {
        field.value = select.value;
        syncSubmitState();
      };
      wrap.appendChild(select);
      break;
    }
    case "text": {
      const input = document.createElement("input");
      input.type = "text";
      input.value = String(field.value ?? "");
      input.oninput = () => {
        field.value = input.value;
        syncSubmitState();
      };
      wrap.appendChild(input);
      break;
    }
  }
  return wrap;
}

function syncSubmitState() {
  if (!currentModel) return;
  const problems = validateForm(currentModel);
  const list = $("form-problems");
  list.innerHTML = "";
  for (const p of problems) {
    const li = document.createElement("div");
    li.textContent = `${p.element}: ${p.reason}`;
    list.appendChild(li);
  }
  ($("submit-btn") as HTMLButtonElement).disabled = problems.length > 0 || inFlight;
}

async function onSubmit() {
  if (!currentModel || !currentServerUrl || !canSubmit(currentModel)) return;
  inFlight = true;
  syncSubmitState();
  const progress = $("upload-progress") as HTMLProgressElement;
  progress.style.display = "block";
  try {
    const resp = await predict(currentServerUrl, toFormData(currentModel), (f) => {
      progress.value = f;
    });
    renderResult(resp.fields, resp.timing);
  } catch (err) {
    const pane = $("result-pane");
    pane.innerHTML = "";
    const msg = err instanceof ServerError ? `${err.code}: ${err.message}` : String(err);
    showError(pane, msg);
  } finally {
    inFlight = false;
    progress.style.display = "none";
    syncSubmitState();
  }
}

// ---------------------------------------------------------------------------
// result view

function renderResult(fields: ResponseField[], timing: any) {
  const pane = $("result-pane");
  pane.innerHTML = "";

  const timingEl = document.createElement("div");
  timingEl.className = "timing";
  timingEl.textContent =
    `pre-processing ${timing.preprocess_s.toFixed(3)} s · ` +
    `inference ${timing.inference_s.toFixed(3)} s · ` +
    `post-processing ${timing.postprocess_s.toFixed(3)} s`;
  pane.appendChild(timingEl);

  for (const field of fields) {
    const panel = document.createElement("div");
    panel.className = "panel";
    const heading = document.createElement("h4");
    heading.textContent = `${field.name} (${field.kind})`;
    panel.appendChild(heading);
    try {
      renderField_result(panel, field);
    } catch (err) {
      showError(panel, `could not render: ${(err as Error).message}`);
    }
    panel.appendChild(downloadLink(field));
    pane.appendChild(panel);
  }
}

function renderField_result(panel: HTMLElement, field: ResponseField) {
  switch (field.kind) {
    case "label_volume":
    case "image_volume": {
      const vol = decodeVolumePayload(field.payload);
      const isLabel = field.kind === "label_volume";
      panel.appendChild(
        sliceViewer(isLabel && inputVolume ? inputVolume : vol, isLabel ? vol : null),
      );
      break;
    }
    case "plain_text": {
      const pre = document.createElement("pre");
      pre.textContent = String(field.payload);
      panel.appendChild(pre);
      break;
    }
    case "scalar_measure": {
      const div = document.createElement("div");
      div.textContent = `${field.payload.value} ${field.payload.unit ?? ""}`;
      panel.appendChild(div);
      break;
    }
    case "point_set": {
      const list = document.createElement("ul");
      for (const p of field.payload.points ?? []) {
        const li = document.createElement("li");
        li.textContent = `(${p.map((c: number) => c.toFixed(1)).join(", ")}) mm`;
        list.appendChild(li);
      }
      panel.appendChild(list);
      if (inputVolume) panel.appendChild(sliceViewer(inputVolume, null, field.payload.points));
      break;
    }
    default: {
      showError(panel, `unknown response kind "${field.kind}"`);
    }
  }
}

function sliceViewer(
  base: Volume,
  label: Volume | null,
  points?: [number, number, number][],
): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "viewer";

  const axisSelect = document.createElement("select");
  for (const axis of ["axial", "coronal", "sagittal"]) {
    const o = document.createElement("option");
    o.value = axis;
    o.textContent = axis;
    axisSelect.appendChild(o);
  }
  const slider = document.createElement("input");
  slider.type = "range";
  const canvas = document.createElement("canvas");
  const range = intensityRange(base);

  const draw = () => {
    const axis = axisSelect.value as Axis;
    const index = Number(slider.value);
    const [w, h] = sliceShape(base, axis);
    canvas.width = w;
    canvas.height = h;
    const baseSlice = extractSlice(base, axis, index);
    let labelSlice: Float32Array | null = null;
    if (label && label.dims.join() === base.dims.join()) {
      labelSlice = extractSlice(label, axis, index);
    }
    const rgba = composeOverlay(baseSlice, labelSlice, w, h, range);
    const ctx = canvas.getContext("2d")!;
    ctx.putImageData(new ImageData(rgba, w, h), 0, 0);
  };

  const resetSlider = () => {
    const n = sliceCount(base, axisSelect.value as Axis);
    slider.min = "0";
    slider.max = String(n - 1);
    slider.value = String(Math.floor(n / 2));
  };

  axisSelect.onchange = () => {
    resetSlider();
    draw();
  };
  slider.oninput = draw;
  resetSlider();
  draw();

  wrap.appendChild(axisSelect);
  wrap.appendChild(slider);
  wrap.appendChild(canvas);
  return wrap;
}

function downloadLink(field: ResponseField): HTMLElement {
  const a = document.createElement("a");
  a.className = "download";
  a.textContent = "download";
  if (field.kind === "label_volume" || field.kind === "image_volume") {
    const bytes = Uint8Array.from(atob(field.payload), (c) => c.charCodeAt(0));
    a.href = URL.createObjectURL(new Blob([bytes], { type: "application/octet-stream" }));
    a.download = `${field.name}.mha`;
  } else if (field.kind === "plain_text") {
    a.href = URL.createObjectURL(new Blob([String(field.payload)], { type: "text/plain" }));
    a.download = `${field.name}.txt`;
  } else {
    a.href = URL.createObjectURL(
      new Blob([JSON.stringify(field.payload)], { type: "application/json" }),
    );
    a.download = `${field.name}.json`;
  }
  return a;
}

function showError(parent: HTMLElement, message: string) {
  const div = document.createElement("div");
  div.className = "error";
  div.textContent = message;
  parent.appendChild(div);
}

// ---------------------------------------------------------------------------

function main() {
  ($("registry-url") as HTMLInputElement).value =
    localStorage.getItem("registry-url") ?? "http://127.0.0.1:8001";
  $("refresh-btn").onclick = () => {
    localStorage.setItem("registry-url", ($("registry-url") as HTMLInputElement).value);
    refreshServerList();
  };
  $("connect-btn").onclick = () => {
    const url = ($("direct-url") as HTMLInputElement).value.trim();
    if (url) selectServer(url);
  };
  // when served from the endpoint itself, offer it as the default connection
  if (location.pathname.startsWith("/console")) {
    ($("direct-url") as HTMLInputElement).value = location.origin;
  }
}

main();
