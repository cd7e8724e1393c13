import { ApiError, StudioApi } from "./api.js";
import {
  assignReferenceToAll,
  colorizeNow,
  initialState,
  reproduceEntry,
  setSlot,
  type WorkbenchState,
} from "./state.js";
import { drawWithOverlay, fileToBase64 } from "./render.js";
import { COMPONENTS, type Component, type ReferenceEntry } from "./types.js";

const api = new StudioApi("");
let state: WorkbenchState = initialState();
const visibleOverlays = new Set<Component>();
let refCounter = 0;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function setStatus(text: string, isError = false) {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

async function redrawWorkbench() {
  if (!state.grayB64) return;
  await drawWithOverlay(
    $("workbench-canvas") as HTMLCanvasElement,
    state.grayB64,
    state.masksB64,
    visibleOverlays,
  );
}

function renderSlots() {
  const host = $("slots");
  host.innerHTML = "";
  for (const c of COMPONENTS) {
    const slot = state.slots[c];
    const row = document.createElement("div");
    row.className = "slot-row";
    const label = document.createElement("span");
    label.className = "slot-name";
    label.textContent = c;
    const desc = document.createElement("span");
    desc.className = "slot-config";
    if (slot.kind === "reference") {
      desc.textContent = `ref: ${state.references.get(slot.refId)?.name ?? slot.refId}`;
    } else if (slot.kind === "sample") {
      desc.textContent = `sampled (seed ${slot.seed})`;
    } else if (slot.kind === "auto") {
      desc.textContent = "auto";
    } else {
      desc.textContent = "empty";
    }
    const sampleBtn = document.createElement("button");
    sampleBtn.textContent = "sample";
    sampleBtn.onclick = () => {
      const seed = Math.floor(Math.random() * 2 ** 31);
      state = setSlot(state, c, { kind: "sample", seed });
      renderSlots();
    };
    const autoBtn = document.createElement("button");
    autoBtn.textContent = "auto";
    autoBtn.onclick = () => {
      state = setSlot(state, c, { kind: "auto" });
      renderSlots();
    };
    const overlayBtn = document.createElement("button");
    overlayBtn.textContent = visibleOverlays.has(c) ? "mask on" : "mask off";
    overlayBtn.onclick = async () => {
      if (visibleOverlays.has(c)) visibleOverlays.delete(c);
      else visibleOverlays.add(c);
      renderSlots();
      await redrawWorkbench();
    };
    const refPick = document.createElement("select");
    refPick.innerHTML = "<option value=''>use reference...</option>";
    for (const [id, ref] of state.references) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = ref.name;
      if (slot.kind === "reference" && slot.refId === id) opt.selected = true;
      refPick.appendChild(opt);
    }
    refPick.onchange = () => {
      if (refPick.value) {
        state = setSlot(state, c, { kind: "reference", refId: refPick.value });
        renderSlots();
      }
    };
    row.append(label, desc, refPick, sampleBtn, autoBtn, overlayBtn);
    host.appendChild(row);
  }
}

function renderGallery() {
  const host = $("gallery");
  host.innerHTML = "";
  for (const entry of state.gallery) {
    const card = document.createElement("div");
    card.className = "gallery-card";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${entry.imageB64}`;
    img.title = JSON.stringify(entry.provenance.slots, null, 2);
    const replay = document.createElement("button");
    replay.textContent = "reproduce";
    replay.onclick = async () => {
      try {
        setStatus(`reproducing ${entry.id}...`);
        const redo = await reproduceEntry(api, entry, state.references);
        const same = redo.imageB64 === entry.imageB64;
        setStatus(
          same
            ? `${entry.id}: reproduced byte-identically`
            : `${entry.id}: REPRODUCTION MISMATCH`,
          !same,
        );
      } catch (err) {
        setStatus(describeError(err), true);
      }
    };
    card.append(img, replay);
    host.appendChild(card);
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `service error ${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

async function onGrayUpload(file: File) {
  try {
    setStatus("parsing grayscale input...");
    state = { ...state, grayB64: await fileToBase64(file) };
    const res = await api.parse(state.grayB64!);
    state = { ...state, masksB64: res.labels_b64, maskPreviewB64: res.preview_b64 };
    setStatus("grayscale + parsing loaded");
  } catch (err) {
    // a parser endpoint may not be configured; allow manual parsing upload
    setStatus(`${describeError(err)} - upload a parsing PNG manually`, true);
  }
  await redrawWorkbench();
}

async function onParsingUpload(file: File) {
  state = { ...state, masksB64: await fileToBase64(file) };
  setStatus("parsing map loaded");
  await redrawWorkbench();
}

async function onReferenceUpload(file: File, parsingFile: File | null) {
  try {
    setStatus(`encoding reference ${file.name}...`);
    const imageB64 = await fileToBase64(file);
    let masksB64: string;
    if (parsingFile) {
      masksB64 = await fileToBase64(parsingFile);
    } else {
      masksB64 = (await api.parse(imageB64)).labels_b64;
    }
    const encoded = await api.encode(imageB64, masksB64);
    const entry: ReferenceEntry = {
      id: `ref-${++refCounter}`,
      name: file.name,
      imageB64,
      masksB64,
      representation: encoded.representation,
    };
    state.references.set(entry.id, entry);
    setStatus(`reference ${file.name} ready`);
    renderSlots();
  } catch (err) {
    setStatus(describeError(err), true);
  }
}

function wire() {
  $("gray-input").onchange = (e) => {
    const f = (e.target as HTMLInputElement).files?.[0];
    if (f) void onGrayUpload(f);
  };
  $("parsing-input").onchange = (e) => {
    const f = (e.target as HTMLInputElement).files?.[0];
    if (f) void onParsingUpload(f);
  };
  $("ref-input").onchange = (e) => {
    const f = (e.target as HTMLInputElement).files?.[0];
    const p = ($("ref-parsing-input") as HTMLInputElement).files?.[0] ?? null;
    if (f) void onReferenceUpload(f, p);
  };
  $("assign-all").onclick = () => {
    const first = state.references.keys().next();
    if (first.done) {
      setStatus("upload a reference first", true);
      return;
    }
    state = assignReferenceToAll(state, first.value);
    renderSlots();
  };
  $("colorize-btn").onclick = async () => {
    if (state.busy) return;
    state = { ...state, busy: true };
    try {
      setStatus("colorizing...");
      const outcome = await colorizeNow(api, state);
      state = { ...outcome.state, busy: false };
      renderGallery();
      setStatus(`added ${outcome.entry.id}`);
    } catch (err) {
      state = { ...state, busy: false };
      setStatus(describeError(err), true);
    }
  };
}

wire();
renderSlots();
setStatus("upload a grayscale image to begin");
