//! A small retail domain: users, orders and a read-only product catalog.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::Domain;
use crate::env::tools::{ParamSpec, ParamType, RegistryError, ToolFn, ToolRegistry, ToolSpec};
use crate::env::DomainDb;

pub const NAME: &str = "mini-retail";

pub const POLICY: &str = "\
- Verify the user's identity with their full name and zip code before looking up or changing any order.
- Only orders with status \"pending\" can be cancelled.
- Only orders with status \"delivered\" can have items exchanged.
- An item can only be exchanged for a product that is available.
- Confirm the details with the user and get an explicit yes before any change to an order.
- Transfer the user to a human agent when the request is outside this policy or the user's statements contradict each other.";

pub fn domain() -> Domain {
    Domain {
        name: NAME,
        policy: POLICY,
        implementations: implementations(),
        identity_tool: Some("find_user"),
        handoff_tool: Some("transfer_to_human"),
    }
}

pub fn registry(specs: Vec<ToolSpec>) -> Result<ToolRegistry, RegistryError> {
    domain().registry(specs)
}

fn param(name: &str, kind: ParamType, description: &str) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        kind,
        required: true,
        description: description.into(),
    }
}

pub fn tool_specs() -> Vec<ToolSpec> {
    use ParamType::String as Str;
    vec![
        ToolSpec {
            name: "find_user".into(),
            description: "Look up a user id by full name and zip code.".into(),
            params: vec![
                param("name", Str, "Full name, e.g. Ann Lee"),
                param("zip", Str, "Five digit zip code"),
            ],
            mutating: false,
        },
        ToolSpec {
            name: "get_order".into(),
            description: "Get the details of an order.".into(),
            params: vec![param("order_id", Str, "Order id, e.g. o1")],
            mutating: false,
        },
        ToolSpec {
            name: "cancel_order".into(),
            description: "Cancel a pending order.".into(),
            params: vec![param("order_id", Str, "Order id")],
            mutating: true,
        },
        ToolSpec {
            name: "exchange_item".into(),
            description: "Exchange one item of an order for another product.".into(),
            params: vec![
                param("order_id", Str, "Order id"),
                param("item_id", Str, "Item currently in the order"),
                param("new_item_id", Str, "Product to exchange it for"),
            ],
            mutating: true,
        },
        ToolSpec {
            name: "transfer_to_human".into(),
            description: "Hand the conversation to a human agent.".into(),
            params: vec![param("summary", Str, "Short summary of the issue")],
            mutating: false,
        },
    ]
}

fn arg<'a>(args: &'a Map<String, Value>, name: &str) -> &'a str {
    args.get(name).and_then(Value::as_str).unwrap_or_default()
}

fn tool(f: fn(&mut DomainDb, &Map<String, Value>) -> Result<Value, String>) -> ToolFn {
    Arc::new(f)
}

pub fn implementations() -> HashMap<String, ToolFn> {
    let mut m = HashMap::new();
    m.insert("find_user".to_string(), tool(find_user));
    m.insert("get_order".to_string(), tool(get_order));
    m.insert("cancel_order".to_string(), tool(cancel_order));
    m.insert("exchange_item".to_string(), tool(exchange_item));
    m.insert("transfer_to_human".to_string(), tool(|_, _| Ok(json!("Transfer successful"))));
    m
}

fn find_user(db: &mut DomainDb, args: &Map<String, Value>) -> Result<Value, String> {
    let name = arg(args, "name").trim().to_lowercase();
    let zip = arg(args, "zip").trim();
    db.collection("users")
        .find(|(_, u)| {
            u["name"].as_str().map(str::to_lowercase).as_deref() == Some(name.as_str())
                && u["zip"].as_str() == Some(zip)
        })
        .map(|(id, _)| json!({ "user_id": id }))
        .ok_or_else(|| "user not found".to_string())
}

fn get_order(db: &mut DomainDb, args: &Map<String, Value>) -> Result<Value, String> {
    let id = arg(args, "order_id");
    db.get("orders", id).cloned().ok_or_else(|| "order not found".to_string())
}

fn cancel_order(db: &mut DomainDb, args: &Map<String, Value>) -> Result<Value, String> {
    let id = arg(args, "order_id");
    let order = db.get_mut("orders", id).ok_or("order not found")?;
    if order["status"] != "pending" {
        return Err("non-pending order cannot be cancelled".into());
    }
    order["status"] = json!("cancelled");
    Ok(json!({ "order_id": id, "status": "cancelled" }))
}

// The delivered-status rule is policy, not enforced here.
fn exchange_item(db: &mut DomainDb, args: &Map<String, Value>) -> Result<Value, String> {
    let (order_id, item_id, new_id) = (arg(args, "order_id"), arg(args, "item_id"), arg(args, "new_item_id"));
    let product = db.get("products", new_id).cloned().ok_or("product not found")?;
    if product["available"] != true {
        return Err("product is not available".into());
    }
    let order = db.get_mut("orders", order_id).ok_or("order not found")?;
    let items = order["items"].as_array_mut().ok_or("order has no items")?;
    let item = items
        .iter_mut()
        .find(|i| i["item_id"] == item_id)
        .ok_or("item not found in order")?;
    item["item_id"] = json!(new_id);
    item["name"] = product["name"].clone();
    order["status"] = json!("exchange requested");
    Ok(json!({ "order_id": order_id, "status": "exchange requested", "new_item_id": new_id }))
}

/// Database shipped with the mini suite.
pub fn sample_db() -> DomainDb {
    let mut db = DomainDb::new().with_mutable(["orders", "users"]);
    for (id, doc) in [
        ("u-ann", json!({"name": "Ann Lee", "zip": "19122", "orders": ["o1", "o4"]})),
        ("u-bob", json!({"name": "Bob Diaz", "zip": "10001", "orders": ["o2"]})),
        ("u-cat", json!({"name": "Cat Wu", "zip": "94110", "orders": ["o3"]})),
    ] {
        db.insert("users", id, doc);
    }
    for (id, doc) in [
        ("o1", json!({"user_id": "u-ann", "status": "pending",
                      "items": [{"item_id": "lamp-white", "name": "Desk lamp", "price": 34.5}]})),
        ("o2", json!({"user_id": "u-bob", "status": "delivered",
                      "items": [{"item_id": "chair-blue", "name": "Office chair (blue)", "price": 120}]})),
        ("o3", json!({"user_id": "u-cat", "status": "shipped",
                      "items": [{"item_id": "kettle-steel", "name": "Kettle (steel)", "price": 45}]})),
        ("o4", json!({"user_id": "u-ann", "status": "delivered",
                      "items": [{"item_id": "mug-red", "name": "Mug (red)", "price": 9.25}]})),
    ] {
        db.insert("orders", id, doc);
    }
    for (id, name, price, available) in [
        ("lamp-white", "Desk lamp", 34.5, true),
        ("chair-blue", "Office chair (blue)", 120.0, true),
        ("chair-red", "Office chair (red)", 120.0, true),
        ("chair-green", "Office chair (green)", 120.0, false),
        ("kettle-steel", "Kettle (steel)", 45.0, true),
        ("kettle-black", "Kettle (black)", 45.0, true),
        ("mug-red", "Mug (red)", 9.25, true),
        ("mug-blue", "Mug (blue)", 9.25, true),
    ] {
        db.insert("products", id, json!({"name": name, "price": price, "available": available}));
    }
    db
}
