// Wire types shared with the prediction endpoints and the registry.

export const ELEMENT_KINDS = ["volume", "scalar_slider", "checkbox", "choice", "text"] as const;
export type ElementKind = (typeof ELEMENT_KINDS)[number];

export interface SliderConstraints {
  minimum: number;
  maximum: number;
  default: number;
}

export interface InterfaceElement {
  name: string;
  kind: string; // kept open: unknown kinds must render as "unsupported", not crash
  label: string;
  required: boolean;
  constraints: Record<string, any>;
}

export interface InterfaceDescription {
  name: string;
  elements: InterfaceElement[];
}

export interface ResponseField {
  name: string;
  kind: string;
  payload: any;
}

export interface PhaseTiming {
  preprocess_s: number;
  inference_s: number;
  postprocess_s: number;
}

export interface PredictionResponse {
  fields: ResponseField[];
  timing: PhaseTiming;
}

export interface ServiceRecord {
  service_id: string;
  prediction_url: string;
  name: string;
  description: string;
  modality: string;
  anatomy: string;
  task: string;
}

export function isKnownKind(kind: string): kind is ElementKind {
  return (ELEMENT_KINDS as readonly string[]).includes(kind);
}

export function parseInterface(json: any): InterfaceDescription {
  if (!json || !Array.isArray(json.elements)) {
    throw new Error("malformed interface description");
  }
  const names = new Set<string>();
  for (const el of json.elements) {
    if (!el.name) throw new Error("interface element without a name");
    if (names.has(el.name)) throw new Error(`duplicate element name: ${el.name}`);
    names.add(el.name);
  }
  return {
    name: String(json.name ?? ""),
    elements: json.elements.map((el: any) => ({
      name: String(el.name),
      kind: String(el.kind),
      label: String(el.label ?? ""),
      required: Boolean(el.required ?? true),
      constraints: el.constraints ?? {},
    })),
  };
}
